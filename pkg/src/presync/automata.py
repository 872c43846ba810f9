"""NFAs over abstract observables.

Contains a small lazy NFA core, the independence relation on abstract
observables, construction of the (bounded-unroll) abstract program
automaton, and the k-bounded commutation-closure automaton together with
a brute-force closure oracle used for testing.
"""

from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, FrozenSet, Iterable, Optional, Tuple

from .wlang import (
    Assign, HavocAssign, If, InputAssign, Output, Program, While, walk,
    expr_vars,
)
from .semantics import (
    AbstractObservable, ProgState, dev_var, step_program, symbol_sort_key,
)


# ---------------------------------------------------------------------------
# Lazy NFA


class Nfa:
    """Nondeterministic finite automaton with lazily generated transitions.

    ``successors(state)`` yields ``(symbol, state')`` pairs where symbol is
    None for epsilon edges.  States may come from an unbounded space; all
    exploration below is driven by reachability.
    """

    def __init__(self, initial: frozenset, is_final: Callable,
                 successors: Callable, alphabet: frozenset):
        self.initial = frozenset(initial)
        self.is_final = is_final
        self.successors = successors
        self.alphabet = frozenset(alphabet)

    @classmethod
    def from_transitions(cls, initial, finals, transitions) -> "Nfa":
        """Explicit automaton from (state, symbol-or-None, state) triples."""
        table = {}
        alphabet = set()
        for s, a, t in transitions:
            table.setdefault(s, []).append((a, t))
            if a is not None:
                alphabet.add(a)
        finals = frozenset(finals)
        return cls(initial=frozenset(initial),
                   is_final=lambda s: s in finals,
                   successors=lambda s: tuple(table.get(s, ())),
                   alphabet=frozenset(alphabet))

    def eps_closure(self, states: Iterable) -> frozenset:
        seen = set(states)
        todo = list(seen)
        while todo:
            s = todo.pop()
            for a, t in self.successors(s):
                if a is None and t not in seen:
                    seen.add(t)
                    todo.append(t)
        return frozenset(seen)

    def step(self, states: frozenset, symbol) -> frozenset:
        out = set()
        for s in states:
            for a, t in self.successors(s):
                if a == symbol:
                    out.add(t)
        return self.eps_closure(out)

    def accepts(self, word: Iterable) -> bool:
        cur = self.eps_closure(self.initial)
        for sym in word:
            cur = self.step(cur, sym)
            if not cur:
                return False
        return any(self.is_final(s) for s in cur)

    def enumerate_words(self, max_len: int, state_budget: int = 1_000_000):
        """All accepted words of length <= max_len (requires the reachable
        subset-construction space within budget to be finite)."""
        words = set()
        start = self.eps_closure(self.initial)
        frontier = deque([(start, ())])
        seen = {(start, ())}
        while frontier:
            if len(seen) > state_budget:
                raise MemoryError("word enumeration exceeded state budget")
            cur, w = frontier.popleft()
            if any(self.is_final(s) for s in cur):
                words.add(w)
            if len(w) == max_len:
                continue
            symbols = {a for s in cur for a, _ in self.successors(s)
                       if a is not None}
            for sym in sorted(symbols, key=symbol_sort_key):
                nxt = self.step(cur, sym)
                if nxt and (nxt, w + (sym,)) not in seen:
                    seen.add((nxt, w + (sym,)))
                    frontier.append((nxt, w + (sym,)))
        return words

    def reachable(self, limit: Optional[int] = None):
        """All states reachable from the initial set."""
        seen = set(self.initial)
        todo = deque(self.initial)
        while todo:
            s = todo.popleft()
            for _, t in self.successors(s):
                if t not in seen:
                    seen.add(t)
                    todo.append(t)
                    if limit is not None and len(seen) > limit:
                        raise MemoryError("automaton exceeds state limit")
        return seen

    def materialize(self, limit: Optional[int] = None) -> "Nfa":
        """Explicit copy of the reachable part."""
        states = self.reachable(limit)
        transitions = [(s, a, t) for s in states for a, t in self.successors(s)]
        finals = [s for s in states if self.is_final(s)]
        return Nfa.from_transitions(self.initial, finals, transitions)

    def dump(self, limit: Optional[int] = None) -> dict:
        """JSON-ready description of the reachable part, with stable ids."""
        states = sorted(self.reachable(limit), key=repr)
        ids = {s: i for i, s in enumerate(states)}
        edges = []
        for s in states:
            for a, t in sorted(self.successors(s),
                               key=lambda at: (symbol_sort_key(at[0])
                                               if at[0] is not None else (),
                                               repr(at[1]))):
                edges.append({"from": ids[s],
                              "symbol": None if a is None else str(a),
                              "to": ids[t]})
        return {
            "states": [{"id": ids[s], "repr": repr(s),
                        "final": bool(self.is_final(s))} for s in states],
            "initial": sorted(ids[s] for s in self.initial),
            "edges": edges,
        }


def word_automaton(word) -> Nfa:
    """Linear automaton accepting exactly one word."""
    w = tuple(word)
    transitions = [(i, w[i], i + 1) for i in range(len(w))]
    return Nfa.from_transitions([0], [len(w)], transitions)


# ---------------------------------------------------------------------------
# Independence


@dataclass(frozen=True)
class Independence:
    """Irreflexive symmetric relation on symbols, given as a predicate."""

    predicate: Callable = field(compare=False)
    name: str = "custom"

    def __call__(self, a, b) -> bool:
        if a == b:
            return False
        return bool(self.predicate(a, b))

    @classmethod
    def from_pairs(cls, pairs, name: str = "pairs") -> "Independence":
        rel = frozenset(pairs) | frozenset((b, a) for a, b in pairs)
        return cls(predicate=lambda a, b: (a, b) in rel, name=name)

    @classmethod
    def empty(cls) -> "Independence":
        return cls(predicate=lambda a, b: False, name="empty")


def _abs_independent(a: AbstractObservable, b: AbstractObservable) -> bool:
    if a.tid == b.tid:
        return False
    if a.var != b.var:
        return True
    return a.access != "write" and b.access != "write"


#: Observables of different threads commute unless they conflict on a
#: variable (same variable, at least one write).
abstract_independence = Independence(predicate=_abs_independent, name="abstract")


# ---------------------------------------------------------------------------
# Abstract program automaton


def program_alphabet(program: Program) -> frozenset:
    """All abstract observables the program can possibly emit."""
    syms = set()
    for tid0, body in enumerate(program.threads):
        tid = tid0 + 1
        for s in walk(body):
            loc = s.loc

            def reads(e):
                return [AbstractObservable(tid, "read", v, loc)
                        for v in expr_vars(e)]

            if isinstance(s, Assign):
                syms.update(reads(s.expr))
                syms.add(AbstractObservable(tid, "write", s.var, loc))
            elif isinstance(s, HavocAssign):
                syms.add(AbstractObservable(tid, "write", s.var, loc))
            elif isinstance(s, InputAssign):
                syms.add(AbstractObservable(tid, "write", dev_var(s.tag), loc))
                syms.add(AbstractObservable(tid, "write", s.var, loc))
            elif isinstance(s, Output):
                syms.update(reads(s.expr))
                syms.add(AbstractObservable(tid, "write", dev_var(s.tag), loc))
            elif isinstance(s, If):
                syms.update(reads(s.cond))
                syms.add(AbstractObservable(tid, "then", None, loc))
                syms.add(AbstractObservable(tid, "else", None, loc))
            elif isinstance(s, While):
                if s.cond is not None:
                    syms.update(reads(s.cond))
                syms.add(AbstractObservable(tid, "loop", None, loc))
                syms.add(AbstractObservable(tid, "exit", None, loc))
    return frozenset(syms)


@dataclass(frozen=True)
class _AutState:
    prog: ProgState
    pendings: tuple  # per-thread queues of observables still to be emitted
    counters: tuple  # ((loop location, entries so far), ...)


def build_abstract_automaton(program: Program, mode: str = "np",
                             unroll: int = 1) -> Nfa:
    """NFA over abstract observables for the program's executions, with each
    loop entered at most ``unroll`` times.  ``mode`` is "np" or "p".

    A statement emitting several observables (e.g. the reads and the write
    of an assignment) does so one edge at a time through a per-thread
    pending queue; under the preemptive mode another thread may be
    scheduled between them, which is precisely where statement-level
    atomicity is lost.
    """
    preemptive = mode.lower() == "p"
    n = program.nthreads
    init = _AutState(prog=ProgState.initial(program, abstract=True),
                     pendings=((),) * n, counters=())

    def is_final(st: _AutState) -> bool:
        return st.prog.finished() and not any(st.pendings)

    def successors(st: _AutState):
        ct = st.prog.ctid
        if ct != 0 and st.pendings[ct - 1]:
            q = st.pendings[ct - 1]
            pend2 = st.pendings[:ct - 1] + (q[1:],) + st.pendings[ct:]
            yield (q[0], _AutState(st.prog, pend2, st.counters))
            if preemptive:
                for c in range(1, n + 1):
                    if c != ct:
                        prog2 = ProgState(val=st.prog.val, ctid=c,
                                          progs=st.prog.progs)
                        yield (None, _AutState(prog2, st.pendings,
                                               st.counters))
            return
        cmap = dict(st.counters)
        for prog2, obs, br in step_program(st.prog, domain=(),
                                           preemptive=preemptive,
                                           abstract=True):
            if br is not None and br[0] == "loop":
                if cmap.get(br[1], 0) >= unroll:
                    continue
                c2 = tuple(sorted(
                    {**cmap, br[1]: cmap.get(br[1], 0) + 1}.items(),
                    key=lambda kv: (kv[0].tid, kv[0].label)))
            elif br is not None and br[0] == "exit":
                c2 = tuple(sorted(
                    ((k, v) for k, v in cmap.items() if k != br[1]),
                    key=lambda kv: (kv[0].tid, kv[0].label)))
            else:
                c2 = st.counters
            if not obs:
                if prog2 == st.prog and c2 == st.counters:
                    continue  # self-reschedule
                yield (None, _AutState(prog2, st.pendings, c2))
            else:
                rest = tuple(obs[1:])
                pend2 = (st.pendings[:ct - 1] + (rest,) + st.pendings[ct:]
                         if ct != 0 else st.pendings)
                yield (obs[0], _AutState(prog2, pend2, c2))

    return Nfa(initial=frozenset([init]), is_final=is_final,
               successors=successors, alphabet=program_alphabet(program))


# ---------------------------------------------------------------------------
# k-bounded commutation-closure automaton


@dataclass(frozen=True)
class CloState:
    """State of the closure automaton.

    eta1 holds symbols the underlying run has emitted but the input still
    owes, as (symbol, age) pairs; the age counts input symbols consumed
    since emission and equals the symbol's leftward displacement when it is
    finally matched.  eta2 holds symbols the input produced ahead of the
    underlying run.
    """
    base: object
    eta1: tuple  # ((symbol, age), ...)
    eta2: tuple  # (symbol, ...)

    def queues_within(self, k: int) -> bool:
        return (len(self.eta1) <= k and len(self.eta2) <= k
                and all(age <= k for _, age in self.eta1))


def _queue_insert(eta: tuple, sym, ind: Independence):
    """Append sym if it is fresh and commutes with the whole queue; None if
    the queue rejects it; ("del", i) if sym cancels the queue's entry i."""
    for i, q in enumerate(eta):
        if q == sym:
            if all(ind(sym, eta[j]) for j in range(i)):
                return ("del", i)
            return None
    if all(ind(sym, q) for q in eta):
        return ("add",)
    return None


def closure_successors(nfa: Nfa, ind: Independence, k: Optional[int]):
    """Transition function of the closure automaton over CloState.

    A word reaches an empty-queue final state iff some language word can be
    produced from it by forward swap passes; each eta1 age, and both queue
    lengths, stay within j exactly when j passes suffice.  With an integer
    k successors beyond that bound are suppressed; with k=None they are all
    produced and the caller decides (used by the inclusion search and for
    exact unbounded-closure membership).
    """

    alphabet = sorted(nfa.alphabet, key=symbol_sort_key)
    cache = {}

    def successors(st: CloState):
        hit = cache.get(st)
        if hit is None:
            hit = cache[st] = tuple(_successors(st))
        return hit

    def _successors(st: CloState):
        for a, t in nfa.successors(st.base):
            if a is None:
                yield (None, CloState(t, st.eta1, st.eta2))
        eta1_syms = tuple(sym for sym, _ in st.eta1)
        # For each input alpha, pick an underlying edge (base, beta, t).
        for beta, t in _base_edges(nfa, st.base):
            for alpha in alphabet:
                r2 = _queue_insert(eta1_syms, alpha, ind)
                if r2 is None:
                    continue
                if r2[0] == "add":
                    eta1, eta2 = st.eta1, st.eta2 + (alpha,)
                else:
                    eta1 = st.eta1[:r2[1]] + st.eta1[r2[1] + 1:]
                    eta2 = st.eta2
                r3 = _queue_insert(eta2, beta, ind)
                if r3 is None:
                    continue
                if r3[0] == "add":
                    eta1p, eta2p = eta1 + ((beta, 0),), eta2
                else:
                    eta1p = eta1
                    eta2p = eta2[:r3[1]] + eta2[r3[1] + 1:]
                # One input symbol was consumed: everything owed ages.
                eta1p = tuple((sym, age + 1) for sym, age in eta1p)
                nxt = CloState(t, eta1p, eta2p)
                if k is not None and not nxt.queues_within(k):
                    continue
                yield (alpha, nxt)

    return successors


def _base_edges(nfa: Nfa, base):
    for a, t in nfa.successors(base):
        if a is not None:
            yield (a, t)


def build_closure_automaton(nfa: Nfa, ind: Independence,
                            k: Optional[int]) -> Nfa:
    """Automaton accepting the k-bounded commutation closure of L(nfa).

    A word is accepted iff it can be transformed into a word of L(nfa) by
    at most k forward passes of adjacent swaps of independent symbols.
    """
    initial = frozenset(CloState(s, (), ()) for s in nfa.initial)

    def is_final(st: CloState) -> bool:
        return (not st.eta1 and not st.eta2 and nfa.is_final(st.base))

    return Nfa(initial=initial, is_final=is_final,
               successors=closure_successors(nfa, ind, k),
               alphabet=nfa.alphabet)


# ---------------------------------------------------------------------------
# Brute-force closure oracle (testing only)


def one_pass(words, ind: Independence):
    """All words reachable by one forward pass of optional adjacent swaps."""
    out = set()
    for w in words:
        cur = {w}
        for i in range(len(w) - 1):
            nxt = set()
            for u in cur:
                nxt.add(u)
                if ind(u[i], u[i + 1]):
                    nxt.add(u[:i] + (u[i + 1], u[i]) + u[i + 2:])
            cur = nxt
        out |= cur
    return out


def swap_closure(words, ind: Independence, max_size: int = 1_000_000):
    """Full closure under single adjacent swaps of independent symbols."""
    seen = set(map(tuple, words))
    todo = deque(seen)
    while todo:
        w = todo.popleft()
        for i in range(len(w) - 1):
            if ind(w[i], w[i + 1]):
                u = w[:i] + (w[i + 1], w[i]) + w[i + 2:]
                if u not in seen:
                    if len(seen) >= max_size:
                        raise MemoryError("swap closure too large")
                    seen.add(u)
                    todo.append(u)
    return seen


def closure_oracle(language, ind: Independence, k: Optional[int]):
    """Reference k-bounded closure of a finite language.

    A candidate (a permutation of some language word) belongs to the
    closure iff k forward swap passes starting from the candidate can
    reach a language word.  k=None computes the full closure.
    """
    language = set(map(tuple, language))
    if k is None:
        return swap_closure(language, ind)
    candidates = set()
    for w in language:
        candidates.update(itertools.permutations(w))
    out = set()
    for c in candidates:
        reach = {c}
        if reach & language:
            out.add(c)
            continue
        for _ in range(k):
            reach = one_pass(reach, ind)
            if reach & language:
                out.add(c)
                break
    return out
