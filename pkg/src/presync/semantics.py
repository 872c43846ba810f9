"""Executable operational semantics for W.

Four interpreters share one small-step core: concrete and data-oblivious
abstract single-thread steps, lifted to non-preemptive and preemptive
whole-program steps.  Also: bounded enumeration of observation sequences
and the two observational-equivalence checks.
"""

from __future__ import annotations

from collections import Counter, deque
from dataclasses import dataclass
from typing import Iterable, Optional, Tuple

from .wlang import (
    Assign, Await, Const, HavocAssign, If, InputAssign, Lock, Op, Output,
    Program, Reset, Seq, Signal, Skip, Stmt, TERM, Unlock, Var, While, Yield,
    expr_vars,
)


class AnalysisError(Exception):
    """Evaluation of an undeclared variable or a kind violation at runtime."""


class RuntimeViolation(Exception):
    """A semantics rule's side condition failed (e.g. unlock not held)."""


class BudgetExceeded(Exception):
    """Enumeration state budget exhausted."""


# ---------------------------------------------------------------------------
# Observables


@dataclass(frozen=True)
class ConcreteObservable:
    tid: int
    kind: str  # "havoc" | "input" | "output"
    value: int
    subject: str  # variable name (havoc) or tag name (input/output)

    def __str__(self) -> str:
        return f"({self.tid},{self.kind},{self.value},{self.subject})"


@dataclass(frozen=True)
class AbstractObservable:
    tid: int
    access: str  # "read" | "write" | "exit" | "loop" | "then" | "else"
    var: Optional[str]  # None exactly for the four branch accesses
    loc: "Location"

    def __str__(self) -> str:
        v = self.var if self.var is not None else "_"
        return f"({self.tid},{self.access},{v},{self.loc})"


BRANCH_ACCESSES = ("exit", "loop", "then", "else")

#: Sort rank used wherever a deterministic symbol order is required.
_ACCESS_RANK = {"read": 0, "write": 1, "exit": 2, "loop": 3, "then": 4, "else": 5}


def symbol_sort_key(sym):
    if isinstance(sym, AbstractObservable):
        return (0, sym.tid, _ACCESS_RANK[sym.access], sym.var or "",
                sym.loc.tid, sym.loc.label)
    return (1, repr(sym))


def dev_var(tag: str) -> str:
    """Abstract variable standing for the external interface behind a tag."""
    return f"dev:{tag}"


def star_var(loc) -> str:
    """Pseudo-variable recording a nondeterministic loop's branch choice."""
    return f"*{loc}"


# ---------------------------------------------------------------------------
# Expressions


def eval_expr(e, val: dict) -> int:
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Var):
        if e.name not in val:
            raise AnalysisError(f"undeclared variable {e.name!r}")
        return val[e.name]
    if isinstance(e, Op):
        if e.op == "!":
            return 0 if eval_expr(e.args[0], val) != 0 else 1
        a = eval_expr(e.args[0], val)
        if e.op == "&&":
            return 1 if a != 0 and eval_expr(e.args[1], val) != 0 else 0
        if e.op == "||":
            return 1 if a != 0 or eval_expr(e.args[1], val) != 0 else 0
        b = eval_expr(e.args[1], val)
        table = {
            "+": a + b, "-": a - b, "*": a * b,
            "==": int(a == b), "!=": int(a != b),
            "<": int(a < b), "<=": int(a <= b),
            ">": int(a > b), ">=": int(a >= b),
        }
        return table[e.op]
    raise AnalysisError(f"cannot evaluate {e!r}")


def reads_of_expression(tid: int, e, loc) -> list:
    """One read observable per variable occurrence, left to right."""
    return [AbstractObservable(tid, "read", v, loc) for v in expr_vars(e)]


# ---------------------------------------------------------------------------
# Single-thread steps
#
# Internal thread actions.  ``kind`` is "step" for pure single-thread rules;
# synchronization statements surface as their own kinds and are resolved by
# the whole-program steppers.  ``branch`` marks loop entry/exit for callers
# that bound unrolling.

_SYNC = {"lock", "unlock", "signal", "await", "reset", "yield"}


def _thread_actions(val, s: Stmt, tid: int, domain, abstract: bool):
    """Yield (kind, payload, val', s', obs, branch) actions for one step of s."""
    if isinstance(s, Seq):
        if isinstance(s.first, Skip):
            # Skip rule: drop the finished head, no observable.
            yield ("step", None, val, s.rest, None, None)
            return
        for kind, payload, v2, s2, obs, br in _thread_actions(
                val, s.first, tid, domain, abstract):
            yield (kind, payload, v2, Seq(loc=None, first=s2, rest=s.rest), obs, br)
        return
    if isinstance(s, Skip):
        return  # finished; no step available
    if isinstance(s, Assign):
        if abstract:
            obs = reads_of_expression(tid, s.expr, s.loc) + [
                AbstractObservable(tid, "write", s.var, s.loc)]
            yield ("step", None, val, TERM, obs, None)
        else:
            k = eval_expr(s.expr, val)
            yield ("step", None, _upd(val, s.var, k), TERM, None, None)
        return
    if isinstance(s, HavocAssign):
        if abstract:
            yield ("step", None, val, TERM,
                   [AbstractObservable(tid, "write", s.var, s.loc)], None)
        else:
            for k in domain:
                yield ("step", None, _upd(val, s.var, k), TERM,
                       ConcreteObservable(tid, "havoc", k, s.var), None)
        return
    if isinstance(s, InputAssign):
        if abstract:
            obs = [AbstractObservable(tid, "write", dev_var(s.tag), s.loc),
                   AbstractObservable(tid, "write", s.var, s.loc)]
            yield ("step", None, val, TERM, obs, None)
        else:
            for k in domain:
                yield ("step", None, _upd(val, s.var, k), TERM,
                       ConcreteObservable(tid, "input", k, s.tag), None)
        return
    if isinstance(s, Output):
        if abstract:
            obs = reads_of_expression(tid, s.expr, s.loc) + [
                AbstractObservable(tid, "write", dev_var(s.tag), s.loc)]
            yield ("step", None, val, TERM, obs, None)
        else:
            k = eval_expr(s.expr, val)
            yield ("step", None, val, TERM,
                   ConcreteObservable(tid, "output", k, s.tag), None)
        return
    if isinstance(s, If):
        if abstract:
            rd = reads_of_expression(tid, s.cond, s.loc)
            yield ("step", None, val, s.then,
                   rd + [AbstractObservable(tid, "then", None, s.loc)], None)
            yield ("step", None, val, s.orelse,
                   rd + [AbstractObservable(tid, "else", None, s.loc)], None)
        else:
            taken = s.then if eval_expr(s.cond, val) != 0 else s.orelse
            yield ("step", None, val, taken, None, None)
        return
    if isinstance(s, While):
        unfold = Seq(loc=None, first=s.body, rest=s)
        if abstract:
            rd = [] if s.cond is None else reads_of_expression(tid, s.cond, s.loc)
            yield ("step", None, val, unfold,
                   rd + [AbstractObservable(tid, "loop", None, s.loc)],
                   ("loop", s.loc))
            yield ("step", None, val, TERM,
                   rd + [AbstractObservable(tid, "exit", None, s.loc)],
                   ("exit", s.loc))
        elif s.cond is None:
            # Nondeterministic loop: the branch choice is an observable
            # guess, like a havoc on a loop-local pseudo-variable.
            yield ("step", None, val, unfold,
                   ConcreteObservable(tid, "havoc", 1, star_var(s.loc)),
                   ("loop", s.loc))
            yield ("step", None, val, TERM,
                   ConcreteObservable(tid, "havoc", 0, star_var(s.loc)),
                   ("exit", s.loc))
        else:
            if eval_expr(s.cond, val) != 0:
                yield ("step", None, val, unfold, None, ("loop", s.loc))
            else:
                yield ("step", None, val, TERM, None, ("exit", s.loc))
        return
    if isinstance(s, Lock):
        yield ("lock", s.var, val, TERM, None, None)
        return
    if isinstance(s, Unlock):
        yield ("unlock", s.var, val, TERM, None, None)
        return
    if isinstance(s, Signal):
        yield ("signal", s.var, val, TERM, None, None)
        return
    if isinstance(s, Await):
        yield ("await", s.var, val, TERM, None, None)
        return
    if isinstance(s, Reset):
        yield ("reset", s.var, val, TERM, None, None)
        return
    if isinstance(s, Yield):
        yield ("yield", None, val, TERM, None, None)
        return
    raise AnalysisError(f"no rule for {s!r}")


def _upd(val: dict, name: str, k: int) -> dict:
    v2 = dict(val)
    v2[name] = k
    return v2


def step_concrete_single(val: dict, s: Stmt, domain: Iterable[int], tid: int = 1):
    """Small-step successors of a single thread: (val', s', observable|None)."""
    out = []
    for kind, payload, v2, s2, obs, _ in _thread_actions(val, s, tid, tuple(domain), False):
        if kind != "step":
            raise AnalysisError(
                f"synchronization statement {kind!r} has no single-thread rule")
        out.append((v2, s2, obs))
    return out


def step_abstract_single(locks_conds: dict, s: Stmt, tid: int = 1):
    """Abstract successors: (val', s', list-of-observables|None)."""
    out = []
    for kind, payload, v2, s2, obs, _ in _thread_actions(locks_conds, s, tid, (), True):
        if kind != "step":
            raise AnalysisError(
                f"synchronization statement {kind!r} has no single-thread rule")
        out.append((v2, s2, obs))
    return out


# ---------------------------------------------------------------------------
# Whole-program steps


@dataclass(frozen=True)
class ProgState:
    val: tuple  # sorted (name, value) pairs
    ctid: int  # 0 before the first scheduling step
    progs: tuple  # residual statement per thread

    @staticmethod
    def initial(program: Program, abstract: bool = False) -> "ProgState":
        val = program.initial_valuation()
        if abstract:
            kinds = {d.name: d.kind for d in program.decls}
            val = {n: v for n, v in val.items() if kinds[n] in ("lock", "cond")}
        return ProgState(val=tuple(sorted(val.items())), ctid=0,
                         progs=program.threads)

    def valuation(self) -> dict:
        return dict(self.val)

    def finished(self) -> bool:
        return all(isinstance(p, Skip) for p in self.progs)


def _with(st: ProgState, val=None, ctid=None, prog_i=None):
    progs = st.progs
    if prog_i is not None:
        i, s = prog_i
        progs = st.progs[:i - 1] + (s,) + st.progs[i:]
    v = st.val if val is None else tuple(sorted(val.items()))
    return ProgState(val=v, ctid=st.ctid if ctid is None else ctid, progs=progs)


def step_program(st: ProgState, domain=(0, 1), preemptive: bool = False,
                 abstract: bool = False):
    """Successors of a program state: list of (state', obs, branch).

    ``obs`` is None, a ConcreteObservable, or a list of AbstractObservables.
    ``branch`` tags loop entry/exit for unroll bookkeeping.
    """
    n = len(st.progs)
    out = []
    if st.ctid == 0:
        for c in range(1, n + 1):
            out.append((_with(st, ctid=c), None, None))
        return out
    i = st.ctid
    prog = st.progs[i - 1]
    val = st.valuation()
    if isinstance(prog, Skip):
        for c in range(1, n + 1):
            out.append((_with(st, ctid=c), None, None))
    else:
        for kind, payload, v2, s2, obs, br in _thread_actions(
                val, prog, i, tuple(domain), abstract):
            if kind == "step":
                out.append((_with(st, val=v2, prog_i=(i, s2)), obs, br))
            elif kind == "lock":
                if val.get(payload, 0) in (0, i):
                    out.append((_with(st, val=_upd(val, payload, i),
                                      prog_i=(i, s2)), None, None))
                else:
                    for c in range(1, n + 1):
                        out.append((_with(st, ctid=c), None, None))
            elif kind == "unlock":
                if val.get(payload, 0) != i:
                    raise RuntimeViolation(
                        f"thread {i} unlocks {payload!r} held by {val.get(payload, 0)}")
                out.append((_with(st, val=_upd(val, payload, 0),
                                  prog_i=(i, s2)), None, None))
            elif kind == "await":
                if val.get(payload, 0) != 0:
                    out.append((_with(st, prog_i=(i, s2)), None, None))
                else:
                    for c in range(1, n + 1):
                        out.append((_with(st, ctid=c), None, None))
            elif kind == "signal":
                out.append((_with(st, val=_upd(val, payload, 1),
                                  prog_i=(i, s2)), None, None))
            elif kind == "reset":
                out.append((_with(st, val=_upd(val, payload, 0),
                                  prog_i=(i, s2)), None, None))
            elif kind == "yield":
                for c in range(1, n + 1):
                    out.append((_with(st, ctid=c, prog_i=(i, s2)), None, None))
    if preemptive:
        for c in range(1, n + 1):
            out.append((_with(st, ctid=c), None, None))
    return out


def step_nonpreemptive(st: ProgState, domain=(0, 1)):
    """Concrete non-preemptive successors: set of (state', obs|None)."""
    return [(s, o) for s, o, _ in step_program(st, domain, preemptive=False)]


def step_preemptive(st: ProgState, domain=(0, 1)):
    """Concrete preemptive successors: non-preemptive plus free reschedules."""
    return [(s, o) for s, o, _ in step_program(st, domain, preemptive=True)]


# ---------------------------------------------------------------------------
# Bounded enumeration


def enumerate_sequences(program: Program, sched: str = "np", level: str = "concrete",
                        max_steps: int = 200, domain=(0, 1), unroll: int = 1,
                        state_budget: int = 100_000,
                        collect_deadlocks: bool = False):
    """All observation sequences of complete executions within max_steps.

    Loop entries are capped at ``unroll`` per loop location.  Raises
    BudgetExceeded rather than silently truncating.  With
    ``collect_deadlocks`` returns (sequences, deadlocked_states).
    """
    preemptive = sched.lower() == "p"
    abstract = level == "abstract"
    if abstract:
        if collect_deadlocks:
            raise ValueError("deadlock collection is concrete-level only")
        # Delegate to the abstract program automaton so that preemption
        # between the observables of one statement is represented the same
        # way everywhere.
        from .automata import build_abstract_automaton
        aut = build_abstract_automaton(program, "p" if preemptive else "np",
                                       unroll)
        try:
            return aut.enumerate_words(max_steps, state_budget=state_budget)
        except MemoryError as e:
            raise BudgetExceeded(str(e)) from None
    init = ProgState.initial(program, abstract=abstract)
    results = set()
    seen = set()
    stack = deque([(init, (), 0, ())])  # state, emitted, steps, loop counters
    visited = 0
    # Per (state, counters) node: scheduling-only edges and whether some
    # successor makes real progress.  A non-final node none of whose
    # scheduling-reachable nodes can progress is a deadlock.
    sched_edges = {}
    can_progress = {}
    truncated = set()
    while stack:
        st, emitted, steps, counters = stack.pop()
        key = (st, emitted, counters)
        if key in seen:
            continue
        seen.add(key)
        visited += 1
        if visited > state_budget:
            raise BudgetExceeded(f"enumeration exceeded {state_budget} states")
        if st.finished():
            results.add(emitted)
            continue
        if steps >= max_steps:
            truncated.add((st, counters))
            continue
        succs = step_program(st, domain, preemptive=preemptive, abstract=abstract)
        node = (st, counters)
        edges = sched_edges.setdefault(node, set())
        cmap = dict(counters)
        for st2, obs, br in succs:
            if br is not None and br[0] == "loop":
                if cmap.get(br[1], 0) >= unroll:
                    continue
                c2 = tuple(sorted({**cmap, br[1]: cmap.get(br[1], 0) + 1}.items(),
                                  key=lambda kv: (kv[0].tid, kv[0].label)))
            elif br is not None and br[0] == "exit":
                c2 = tuple(sorted(((k, v) for k, v in cmap.items() if k != br[1]),
                                  key=lambda kv: (kv[0].tid, kv[0].label)))
            else:
                c2 = counters
            if st2 == st and obs is None and c2 == counters:
                continue  # self-reschedule, no progress
            if (obs is None and st2.progs == st.progs and st2.val == st.val
                    and c2 == counters):
                edges.add((st2, c2))  # pure scheduler move
            else:
                can_progress[node] = True
            if obs is None:
                em2 = emitted
            elif isinstance(obs, list):
                em2 = emitted + tuple(obs)
            else:
                em2 = emitted + (obs,)
            stack.append((st2, em2, steps + 1, c2))
    if not collect_deadlocks:
        return results
    # Propagate progress (and the unknown status of depth-truncated nodes)
    # backwards over scheduler moves.
    changed = True
    while changed:
        changed = False
        for node, edges in sched_edges.items():
            if can_progress.get(node):
                continue
            if any(can_progress.get(t) or t in truncated
                   or t[0].finished() for t in edges):
                can_progress[node] = True
                changed = True
    deadlocks = [st for (st, _c) in sched_edges
                 if not can_progress.get((st, _c))]
    return results, deadlocks


# ---------------------------------------------------------------------------
# Observational equivalence


def equivalent_concrete(a, b) -> bool:
    """Same global I/O subsequence and same per-thread havoc subsequences."""
    a, b = tuple(a), tuple(b)
    io_a = [o for o in a if o.kind in ("input", "output")]
    io_b = [o for o in b if o.kind in ("input", "output")]
    if io_a != io_b:
        return False
    tids = {o.tid for o in a} | {o.tid for o in b}
    for t in tids:
        ha = [o for o in a if o.kind == "havoc" and o.tid == t]
        hb = [o for o in b if o.kind == "havoc" and o.tid == t]
        if ha != hb:
            return False
    return True


def equivalent_abstract(a, b) -> bool:
    """Per-thread subsequences, per-variable write orders, and per-variable
    read multisets between consecutive writes must all agree."""
    a, b = tuple(a), tuple(b)
    if Counter(a) != Counter(b):
        return False
    tids = {o.tid for o in a}
    for t in tids:
        if [o for o in a if o.tid == t] != [o for o in b if o.tid == t]:
            return False
    variables = {o.var for o in a if o.var is not None}
    for v in variables:
        wa = [o for o in a if o.var == v and o.access == "write"]
        wb = [o for o in b if o.var == v and o.access == "write"]
        if wa != wb:
            return False
        if _read_segments(a, v) != _read_segments(b, v):
            return False
    return True


def _read_segments(seq, v):
    """Multisets of reads of v split at each write of v."""
    segments = []
    cur = Counter()
    for o in seq:
        if o.var != v:
            continue
        if o.access == "write":
            segments.append(cur)
            cur = Counter()
        elif o.access == "read":
            cur[o] += 1
    segments.append(cur)
    return segments
