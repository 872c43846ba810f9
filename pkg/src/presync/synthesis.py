"""Counterexample-guided synchronization synthesis.

Takes a genuine counterexample trace from the inclusion check, explores its
neighborhood of per-thread-order-preserving permutations, characterizes the
bad ones by ordering constraints, generalizes, matches the constraint
against lock/reorder fix patterns, and applies fixes until the preemptive
behavior is included in the closure of the non-preemptive behavior.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Iterable, List, Optional, Tuple

from .wlang import (
    Await, If, Location, Lock, Program, Seq, Signal, Skip, Stmt, Unlock,
    While, Yield, seq, seq_items, walk, Decl,
)
from .semantics import AbstractObservable, ProgState, equivalent_abstract
from .automata import Nfa, abstract_independence, build_abstract_automaton
from .inclusion import BudgetExceeded, inclusion_iterative


class PlacementFailure(Exception):
    """A synthesized lock span or signal move would cross a preemption
    point (yield/lock/unlock/await) and is reported instead of applied."""


# ---------------------------------------------------------------------------
# Events and ordering constraints


@dataclass(frozen=True)
class EventId:
    tid: int
    label: str
    occ: int  # 1-based occurrence of this (tid, label) in the trace

    def __str__(self) -> str:
        if self.occ == 1:
            return f"T{self.tid}.{self.label}"
        return f"T{self.tid}.{self.label}#{self.occ}"


@dataclass(frozen=True)
class Event:
    eid: EventId
    obs: AbstractObservable

    def __str__(self) -> str:
        return f"{self.eid}:{self.obs.access}"


@dataclass(frozen=True)
class Atom:
    """Event `left` is scheduled before event `right`."""
    left: EventId
    right: EventId

    def __str__(self) -> str:
        return f"{self.left} < {self.right}"

    def holds(self, pos: dict) -> bool:
        return pos[self.left] < pos[self.right]


@dataclass(frozen=True)
class And:
    items: tuple

    def __str__(self) -> str:
        return " && ".join(str(i) for i in self.items) if self.items else "true"

    def holds(self, pos: dict) -> bool:
        return all(i.holds(pos) for i in self.items)


@dataclass(frozen=True)
class Or:
    items: tuple

    def __str__(self) -> str:
        return " || ".join(f"({i})" for i in self.items) if self.items else "false"

    def holds(self, pos: dict) -> bool:
        return any(i.holds(pos) for i in self.items)


@dataclass(frozen=True)
class Not:
    item: object

    def __str__(self) -> str:
        return f"!({self.item})"

    def holds(self, pos: dict) -> bool:
        return not self.item.holds(pos)


def events_of_trace(trace: Iterable[AbstractObservable]) -> tuple:
    """Wrap each observable in an Event with a unique occurrence-counted id."""
    counts = {}
    out = []
    for obs in trace:
        key = (obs.tid, obs.loc.label)
        counts[key] = counts.get(key, 0) + 1
        out.append(Event(EventId(obs.tid, obs.loc.label, counts[key]), obs))
    return tuple(out)


def trace_positions(trace: tuple) -> dict:
    return {ev.eid: i for i, ev in enumerate(trace)}


# ---------------------------------------------------------------------------
# Neighborhood


def neighborhood(cex: tuple, cap: int = 100_000) -> set:
    """All permutations of cex's events preserving each thread's order."""
    threads = {}
    for ev in cex:
        threads.setdefault(ev.eid.tid, []).append(ev)
    seqs = list(threads.values())
    total = math.factorial(len(cex))
    for s in seqs:
        total //= math.factorial(len(s))
    if total > cap:
        raise BudgetExceeded(
            f"neighborhood has {total} traces, exceeding cap {cap}")
    out = set()

    def interleave(prefix, tails):
        if all(i == len(s) for s, i in zip(seqs, tails)):
            out.add(tuple(prefix))
            return
        for j, s in enumerate(seqs):
            if tails[j] < len(s):
                prefix.append(s[tails[j]])
                tails[j] += 1
                interleave(prefix, tails)
                tails[j] -= 1
                prefix.pop()

    interleave([], [0] * len(seqs))
    return out


# ---------------------------------------------------------------------------
# Feasibility and classification


def projected_accepts(nfa: Nfa, word: tuple, support: frozenset) -> bool:
    """True iff some accepting path of nfa spells exactly `word` when
    projected onto the symbols in `support` (all other symbols ignored)."""
    start = {(s, 0) for s in nfa.initial}
    seen = set(start)
    todo = deque(start)
    n = len(word)
    while todo:
        state, pos = todo.popleft()
        if pos == n and nfa.is_final(state):
            return True
        for sym, t in nfa.successors(state):
            if sym is None or sym not in support:
                nxt = (t, pos)
            elif pos < n and sym == word[pos]:
                nxt = (t, pos + 1)
            else:
                continue
            if nxt not in seen:
                seen.add(nxt)
                todo.append(nxt)
    return False


def classify_traces(nhood: set, a_np: Nfa, a_p: Nfa):
    """Split the neighborhood into (np_feasible, p_feasible, bad) traces.

    A trace is bad if it is feasible under the preemptive automaton and its
    observation sequence is equivalent to no NP-feasible trace.
    """
    support = frozenset(ev.obs for t in nhood for ev in t)
    np_feasible = set()
    p_feasible = set()
    for t in sorted(nhood, key=lambda t: tuple(str(e.eid) for e in t)):
        word = tuple(ev.obs for ev in t)
        if projected_accepts(a_np, word, support):
            np_feasible.add(t)
        if projected_accepts(a_p, word, support):
            p_feasible.add(t)
    np_words = [tuple(ev.obs for ev in t) for t in np_feasible]
    bad = set()
    for t in p_feasible:
        word = tuple(ev.obs for ev in t)
        if not any(equivalent_abstract(word, u) for u in np_words):
            bad.add(t)
    return np_feasible, p_feasible, bad


# ---------------------------------------------------------------------------
# Ordering constraints and generalization


def phi_of_trace(trace: tuple) -> And:
    """Conjunction ordering all cross-thread dependent event pairs as they
    occur in the trace."""
    atoms = []
    for i in range(len(trace)):
        for j in range(i + 1, len(trace)):
            a, b = trace[i], trace[j]
            if a.eid.tid == b.eid.tid:
                continue
            if abstract_independence(a.obs, b.obs):
                continue
            atoms.append(Atom(a.eid, b.eid))
    return And(tuple(atoms))


def generalize(bad_trace: tuple, bad: set, feasible: set) -> And:
    """Greedy subset-minimal weakening of Phi(bad_trace) whose models within
    the feasible (preemptively schedulable) neighborhood are all bad."""
    atoms = list(phi_of_trace(bad_trace).items)
    positions = {t: trace_positions(t) for t in feasible}

    def all_models_bad(remaining):
        c = And(tuple(remaining))
        return all(t in bad for t in feasible if c.holds(positions[t]))

    assert all_models_bad(atoms), "Phi(bad_trace) admits a good trace"
    order = sorted(range(len(atoms)),
                   key=lambda i: (trace_positions(bad_trace)[atoms[i].left],
                                  trace_positions(bad_trace)[atoms[i].right]))
    kept = list(atoms)
    for i in order:
        trial = [a for a in kept if a is not atoms[i]]
        if all_models_bad(trial):
            kept = trial
    return And(tuple(a for a in atoms if a in kept))


# ---------------------------------------------------------------------------
# Fix inference


@dataclass(frozen=True)
class LockFix:
    """Acquire one fresh lock around a label range in each listed thread."""
    ranges: tuple  # ((tid, lo_label, hi_label), ...) sorted by tid

    def __str__(self) -> str:
        parts = ", ".join(f"T{t}.[{lo}:{hi}]" for t, lo, hi in self.ranges)
        return f"lock({parts})"


@dataclass(frozen=True)
class ReorderFix:
    """Move the signal statement at `signal_label` to just after
    `after_label` within thread `tid`."""
    tid: int
    signal_label: str
    after_label: str

    def __str__(self) -> str:
        return f"reorder(T{self.tid}.{self.signal_label} after " \
               f"T{self.tid}.{self.after_label})"


def labeled_stmts(body: Stmt):
    """Statements of a thread body in program order, skipping synthetic
    unlabeled markers (e.g. the implicit empty else branch)."""
    return [s for s in walk(body) if s.loc is not None]


def label_order(program: Program, tid: int) -> dict:
    """Program-order index of each label within a thread."""
    return {s.loc.label: i
            for i, s in enumerate(labeled_stmts(program.threads[tid - 1]))}


def _stmt_at(program: Program, tid: int, label: str) -> Optional[Stmt]:
    for s in labeled_stmts(program.threads[tid - 1]):
        if s.loc.label == label:
            return s
    return None


def infer_fixes(rho_g: And, program: Program) -> list:
    """Match the generalized constraint against the lock/lock2/reorder
    patterns; returns all distinct applicable fixes (lock fixes first)."""
    orders = {tid: label_order(program, tid)
              for tid in range(1, program.nthreads + 1)}

    def valid(tid, lo, hi):
        o = orders[tid]
        return lo in o and hi in o and o[lo] <= o[hi]

    locks = []
    reorders = []
    atoms = list(rho_g.items)
    for a1 in atoms:
        for a2 in atoms:
            t1, t2 = a1.left.tid, a1.right.tid
            if t1 == t2:
                continue
            # Add.Lock: t1.l1 < t2.l2' and t2.l2 < t1.l1'
            if a2.left.tid == t2 and a2.right.tid == t1:
                l1, l2p = a1.left.label, a1.right.label
                l2, l1p = a2.left.label, a2.right.label
                if valid(t1, l1, l1p) and valid(t2, l2, l2p):
                    locks.append(LockFix(tuple(sorted(
                        [(t1, l1, l1p), (t2, l2, l2p)]))))
            # Add.Lock2: t1.l1 < t2.l2 and t2.l2' < t1.l1'
            if a2.left.tid == t2 and a2.right.tid == t1 and a2 is not a1:
                l1, l2 = a1.left.label, a1.right.label
                l2p, l1p = a2.left.label, a2.right.label
                if valid(t1, l1, l1p) and valid(t2, l2, l2p):
                    locks.append(LockFix(tuple(sorted(
                        [(t1, l1, l1p), (t2, l2, l2p)]))))
    # Add.Reorder: t1.l1' < t2.l2' with earlier await(c) in t1 and
    # signal(c) in t2.
    for a in atoms:
        t1, l1p = a.left.tid, a.left.label
        t2, l2p = a.right.tid, a.right.label
        if t1 == t2:
            continue
        o1, o2 = orders[t1], orders[t2]
        if l1p not in o1 or l2p not in o2:
            continue
        for s1 in labeled_stmts(program.threads[t1 - 1]):
            if not isinstance(s1, Await) or o1[s1.loc.label] >= o1[l1p]:
                continue
            for s2 in labeled_stmts(program.threads[t2 - 1]):
                if (isinstance(s2, Signal) and s2.var == s1.var
                        and o2[s2.loc.label] < o2[l2p]):
                    reorders.append(ReorderFix(t2, s2.loc.label, l2p))
    out = []
    for f in locks + reorders:
        if f not in out:
            out.append(f)
    return out


# ---------------------------------------------------------------------------
# Program rewriting


def _child_blocks(s: Stmt):
    if isinstance(s, While):
        yield ("body", seq_items(s.body))
    elif isinstance(s, If):
        yield ("then", seq_items(s.then))
        yield ("orelse", seq_items(s.orelse))


def _with_child(s: Stmt, which: str, items: list) -> Stmt:
    return replace(s, **{which: seq(items)})


def _locate(block: list, label: str):
    """Path [(index, child-name), ..., (index, None)] to the labeled
    statement, or None."""
    for i, st in enumerate(block):
        if st.loc is not None and st.loc.label == label:
            return [(i, None)]
        for which, child in _child_blocks(st):
            sub = _locate(child, label)
            if sub is not None:
                return [(i, which)] + sub
    return None


def _span_has_preemption(stmts: list) -> bool:
    return any(isinstance(s, (Yield, Lock, Unlock, Await))
               for st in stmts for s in walk(st))


def _fresh_labels(program: Program, tid: int, n: int) -> list:
    used = {s.loc.label for s in labeled_stmts(program.threads[tid - 1])}
    out = []
    i = 1
    while len(out) < n:
        cand = f"s{i}"
        if cand not in used:
            out.append(cand)
            used.add(cand)
        i += 1
    return out


def _insert_lock_block(block: list, lo: str, hi: str, var: str, tid: int,
                       labels: list) -> list:
    p_lo = _locate(block, lo)
    p_hi = _locate(block, hi)
    if p_lo is None or p_hi is None:
        raise PlacementFailure(f"label {lo if p_lo is None else hi} "
                               f"not found in thread {tid}")
    (i, lo_child), (j, hi_child) = p_lo[0], p_hi[0]
    if i == j and lo_child is not None and hi_child == lo_child \
            and len(p_lo) > 1 and len(p_hi) > 1:
        # Both endpoints live inside the same child block: recurse.
        st = block[i]
        for which, child in _child_blocks(st):
            if which == lo_child:
                new_child = _insert_lock_block(child, lo, hi, var, tid, labels)
                return block[:i] + [_with_child(st, which, new_child)] \
                    + block[i + 1:]
    a, b = min(i, j), max(i, j)
    span = block[a:b + 1]
    if _span_has_preemption(span):
        raise PlacementFailure(
            f"lock span [{lo}:{hi}] in thread {tid} crosses a preemption "
            "point (yield/lock/await)")
    acquire = Lock(loc=Location(tid, labels[0]), var=var)
    release = Unlock(loc=Location(tid, labels[1]), var=var)
    return block[:a] + [acquire] + span + [release] + block[b + 1:]


def place_locks(program: Program, groups: list) -> Program:
    """Wrap each lock group's per-thread label interval with lock/unlock at
    the innermost block covering both endpoints.

    groups: list of (lock_var, {tid: (lo_label, hi_label)}).
    """
    threads = list(program.threads)
    decls = list(program.decls)
    declared = {d.name for d in decls}
    for var, ranges in groups:
        if var not in declared:
            decls.append(Decl(name=var, kind="lock", init=0))
            declared.add(var)
        for tid, (lo, hi) in sorted(ranges.items()):
            prog_now = Program(decls=tuple(decls), threads=tuple(threads),
                               thread_names=program.thread_names)
            labels = _fresh_labels(prog_now, tid, 2)
            block = seq_items(threads[tid - 1])
            new_block = _insert_lock_block(block, lo, hi, var, tid, labels)
            threads[tid - 1] = seq(new_block)
    return Program(decls=tuple(decls), threads=tuple(threads),
                   thread_names=program.thread_names)


def _remove_labeled(block: list, label: str):
    for i, st in enumerate(block):
        if st.loc is not None and st.loc.label == label:
            return block[:i] + block[i + 1:], st
        for which, child in _child_blocks(st):
            sub, removed = _remove_labeled(child, label)
            if removed is not None:
                return (block[:i] + [_with_child(st, which, sub)]
                        + block[i + 1:], removed)
    return block, None


def _insert_after(block: list, label: str, stmt: Stmt):
    for i, st in enumerate(block):
        if st.loc is not None and st.loc.label == label:
            return block[:i + 1] + [stmt] + block[i + 1:], True
        for which, child in _child_blocks(st):
            sub, done = _insert_after(child, label, stmt)
            if done:
                return (block[:i] + [_with_child(st, which, sub)]
                        + block[i + 1:], True)
    return block, False


def apply_reorder(program: Program, fix: ReorderFix) -> Program:
    """Move the signal statement after its target, rejecting moves across
    preemption points so NP behavior is preserved."""
    tid = fix.tid
    order = label_order(program, tid)
    if fix.signal_label not in order or fix.after_label not in order:
        raise PlacementFailure(f"reorder labels missing in thread {tid}")
    lo = min(order[fix.signal_label], order[fix.after_label])
    hi = max(order[fix.signal_label], order[fix.after_label])
    for s in labeled_stmts(program.threads[tid - 1]):
        idx = order[s.loc.label]
        if lo < idx <= hi and s.loc.label != fix.signal_label \
                and isinstance(s, (Yield, Lock, Unlock, Await)):
            raise PlacementFailure(
                f"reorder of T{tid}.{fix.signal_label} crosses a preemption "
                f"point at label {s.loc.label}")
    block = seq_items(program.threads[tid - 1])
    block, removed = _remove_labeled(block, fix.signal_label)
    if removed is None or not isinstance(removed, Signal):
        raise PlacementFailure(
            f"T{tid}.{fix.signal_label} is not a signal statement")
    block, done = _insert_after(block, fix.after_label, removed)
    if not done:
        raise PlacementFailure(
            f"reorder target T{tid}.{fix.after_label} not found")
    threads = list(program.threads)
    threads[tid - 1] = seq(block)
    return Program(decls=program.decls, threads=tuple(threads),
                   thread_names=program.thread_names)


# ---------------------------------------------------------------------------
# Deadlock detection


def detect_deadlocks(program: Program, unroll: int = 1,
                     state_budget: int = 50_000) -> list:
    """Static lock-order cycles plus bounded search for stuck states."""
    warnings = []
    # Lock-order graph over syntactic acquisition nesting, per thread.
    edges = set()
    for body in program.threads:
        held = []
        for s in walk(body):
            if isinstance(s, Lock):
                for h in held:
                    edges.add((h, s.var))
                held.append(s.var)
            elif isinstance(s, Unlock) and s.var in held:
                held.remove(s.var)
    adj = {}
    for a, b in edges:
        adj.setdefault(a, set()).add(b)

    def on_cycle(start):
        stack, seen = [start], set()
        while stack:
            v = stack.pop()
            for w in adj.get(v, ()):
                if w == start:
                    return True
                if w not in seen:
                    seen.add(w)
                    stack.append(w)
        return False

    for v in sorted(adj):
        if on_cycle(v):
            warnings.append(f"lock-order cycle through {v!r}")
    # Bounded reachability: states where every unfinished thread is blocked.
    from .semantics import step_program
    init = ProgState.initial(program, abstract=True)
    seen = {init}
    todo = deque([init])
    found_stuck = False
    while todo and len(seen) < state_budget and not found_stuck:
        st = todo.popleft()
        if not st.finished():
            stuck = True
            for tid in range(1, program.nthreads + 1):
                probe = ProgState(val=st.val, ctid=tid, progs=st.progs)
                for st2, obs, _ in step_program(probe, domain=(),
                                                preemptive=False,
                                                abstract=True):
                    if st2.progs != probe.progs or obs or st2.val != probe.val:
                        stuck = False
                        break
                if not stuck:
                    break
            if stuck:
                warnings.append(
                    "reachable state where every unfinished thread is "
                    "blocked on a lock or await")
                found_stuck = True
        for st2, obs, br in step_program(st, domain=(), preemptive=True,
                                         abstract=True):
            if st2 not in seen:
                seen.add(st2)
                todo.append(st2)
    return warnings


# ---------------------------------------------------------------------------
# The synthesis loop


@dataclass
class SynthesisConfig:
    unroll: int = 1
    k_start: int = 2
    k_max: int = 8
    max_tuples: int = 1_000_000
    timeout_s: Optional[float] = None
    max_iterations: int = 20
    nhood_cap: int = 100_000


@dataclass
class IterationReport:
    counterexample: tuple
    rho_g: str
    fixes: tuple  # LockFix / ReorderFix objects
    k_reached: int
    tuples_explored: int


@dataclass
class SynthesisReport:
    verdict: str  # "success" | "no-pattern" | "iteration-cap" | "placement-failure"
    iterations: List[IterationReport] = field(default_factory=list)
    rho_g: Optional[str] = None
    warnings: List[str] = field(default_factory=list)
    detail: Optional[str] = None


def _merge_groups(groups: list) -> list:
    """Union lock groups whose intervals overlap on some thread, keeping the
    oldest group's lock variable."""
    groups = [(name, dict(r)) for name, r in groups]
    changed = True
    while changed:
        changed = False
        for i in range(len(groups)):
            for j in range(i + 1, len(groups)):
                ri, rj = groups[i][1], groups[j][1]
                if any(t in rj and _overlap(ri[t], rj[t]) for t in ri):
                    merged = dict(ri)
                    for t, iv in rj.items():
                        merged[t] = _hull(merged[t], iv) if t in merged else iv
                    groups[i] = (groups[i][0], merged)
                    del groups[j]
                    changed = True
                    break
            if changed:
                break
    return groups


def _overlap(a, b) -> bool:
    return a[0] <= b[1] and b[0] <= a[1]


def _hull(a, b):
    return (min(a[0], b[0]), max(a[1], b[1]))


def synthesize(program: Program, config: SynthesisConfig = SynthesisConfig()):
    """Iteratively repair `program` until its preemptive abstract behavior
    is included in the closure of its own non-preemptive behavior.

    Returns (program', SynthesisReport).  The NP reference automaton is
    built from the original program once; lock fixes are re-placed onto the
    original (reordered) program each iteration so intervals can merge.
    """
    a_np = build_abstract_automaton(program, "np", config.unroll)
    base = program  # original program, mutated only by reorder fixes
    lock_groups = []  # (name, {tid: (lo_idx, hi_idx)}) in label indices
    label_by_index = {
        tid: [s.loc.label for s in labeled_stmts(program.threads[tid - 1])]
        for tid in range(1, program.nthreads + 1)}
    orders = {tid: label_order(program, tid)
              for tid in range(1, program.nthreads + 1)}
    report = SynthesisReport(verdict="iteration-cap")
    next_lock = 1
    current = program
    for _ in range(config.max_iterations):
        a_p = build_abstract_automaton(current, "p", config.unroll)
        res = inclusion_iterative(
            a_p, a_np, abstract_independence, k_start=config.k_start,
            k_max=config.k_max, max_tuples=config.max_tuples,
            timeout_s=config.timeout_s)
        if res.holds:
            report.verdict = "success"
            report.warnings = detect_deadlocks(current, config.unroll)
            return current, report
        cex = events_of_trace(res.counterexample)
        nhood = neighborhood(cex, config.nhood_cap)
        np_feasible, p_feasible, bad = classify_traces(nhood, a_np, a_p)
        assert cex in bad, "counterexample not classified as bad"
        rho_g = generalize(cex, bad, p_feasible)
        fixes = infer_fixes(rho_g, base)
        it = IterationReport(counterexample=res.counterexample,
                             rho_g=str(rho_g), fixes=tuple(fixes),
                             k_reached=res.k_reached,
                             tuples_explored=res.tuples_explored)
        report.iterations.append(it)
        if not fixes:
            report.verdict = "no-pattern"
            report.rho_g = str(rho_g)
            return current, report
        try:
            for fix in fixes:
                if isinstance(fix, LockFix):
                    ranges = {}
                    for tid, lo, hi in fix.ranges:
                        iv = (orders[tid][lo], orders[tid][hi])
                        ranges[tid] = _hull(ranges[tid], iv) \
                            if tid in ranges else iv
                    lock_groups.append((f"synth_lock_{next_lock}", ranges))
                    next_lock += 1
                else:
                    base = apply_reorder(base, fix)
                    orders = {tid: label_order(base, tid)
                              for tid in range(1, base.nthreads + 1)}
                    label_by_index = {
                        tid: [s.loc.label
                              for s in labeled_stmts(base.threads[tid - 1])]
                        for tid in range(1, base.nthreads + 1)}
            lock_groups = _merge_groups(lock_groups)
            placed = [(name, {tid: (label_by_index[tid][iv[0]],
                                    label_by_index[tid][iv[1]])
                              for tid, iv in ranges.items()})
                      for name, ranges in lock_groups]
            current = place_locks(base, placed)
        except PlacementFailure as e:
            report.verdict = "placement-failure"
            report.detail = str(e)
            report.rho_g = str(rho_g)
            return current, report
    report.rho_g = report.iterations[-1].rho_g if report.iterations else None
    return current, report
