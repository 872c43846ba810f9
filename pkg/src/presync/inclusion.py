"""Antichain-based language inclusion modulo an independence relation.

Checks L(A) subseteq Clo_I(L(B)) by exploring A against the on-the-fly
determinized closure automaton of B, bounding the closure queues by k and
increasing k incrementally: exploration that hit the bound is remembered in
an overflow set and resumed after a spurious counterexample.
"""

from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

from .automata import CloState, Independence, Nfa, closure_successors, word_automaton
from .semantics import symbol_sort_key


class BudgetExceeded(Exception):
    """Tuple or time budget exhausted before a verdict was reached."""


@dataclass
class InclusionResult:
    holds: bool
    counterexample: Optional[tuple] = None
    k_reached: int = 0
    tuples_explored: int = 0
    restarts: int = 0


@dataclass
class _Tuple:
    a_state: object
    b_set: frozenset  # of CloState
    witness: tuple
    dirty: bool = False

    def key(self):
        return (self.a_state, self.b_set)


def _dominates(p: _Tuple, q: _Tuple) -> bool:
    """p makes q redundant: same A-state and p's B-set is contained in q's."""
    return p.a_state == q.a_state and p.b_set <= q.b_set


class _ClosureSide:
    """Determinized view of B's closure automaton with unbounded queues."""

    def __init__(self, b: Nfa, ind: Independence):
        self.b = b
        self.succ = closure_successors(b, ind, None)
        self._step_cache = {}

    def initial(self) -> frozenset:
        return self._eps(frozenset(CloState(s, (), ()) for s in self.b.initial))

    def _eps(self, states: frozenset) -> frozenset:
        seen = set(states)
        todo = list(states)
        while todo:
            s = todo.pop()
            for a, t in self.succ(s):
                if a is None and t not in seen:
                    seen.add(t)
                    todo.append(t)
        return frozenset(seen)

    def step(self, states: frozenset, symbol) -> frozenset:
        key = (states, symbol)
        cached = self._step_cache.get(key)
        if cached is not None:
            return cached
        out = set()
        for s in states:
            for a, t in self.succ(s):
                if a == symbol:
                    out.add(t)
        res = self._eps(frozenset(out))
        self._step_cache[key] = res
        return res

    def has_final(self, states: frozenset) -> bool:
        return any(not s.eta1 and not s.eta2 and self.b.is_final(s.base)
                   for s in states)


def _a_successors(a: Nfa, s_a):
    """A-side edges in a deterministic order; symbol None for epsilon.

    Epsilon (scheduler) edges come first, in reverse order of their target
    representation, then labelled edges sorted by symbol.  Any fixed order
    is sound; this one is kept stable so reports are reproducible.
    """
    edges = list(a.successors(s_a))
    eps = [e for e in edges if e[0] is None]
    sym = [e for e in edges if e[0] is not None]
    eps.sort(key=lambda at: repr(at[1]), reverse=True)
    sym.sort(key=lambda at: (symbol_sort_key(at[0]), repr(at[1])))
    return eps + sym


class SearchState:
    """Persistent frontier/antichain/overflow across k-increasing rounds."""

    def __init__(self, a: Nfa, side: _ClosureSide):
        self.a = a
        self.side = side
        b0 = side.initial()
        init = [_Tuple(s, b0, ()) for s in sorted(a.initial, key=repr)]
        self.frontier = deque(init)
        self.antichain = list(init)
        self.overflow = []
        self.tuples_explored = 0

    def restart(self):
        """Drop all dirty exploration and resume from the overflow points."""
        keep = [t for t in self.antichain if not t.dirty]
        resumed = [_Tuple(t.a_state, t.b_set, t.witness) for t in self.overflow]
        self.frontier = deque(
            [t for t in self.frontier if not t.dirty] + resumed)
        self.antichain = keep + resumed
        self.overflow = []

    def run(self, k: int, max_tuples: int, deadline: Optional[float]):
        """One antichain round at bound k; returns None if inclusion holds,
        else a counterexample word."""
        while self.frontier:
            if deadline is not None and time.monotonic() > deadline:
                raise BudgetExceeded("inclusion timed out")
            cur = self.frontier.popleft()
            self.tuples_explored += 1
            if self.tuples_explored > max_tuples:
                raise BudgetExceeded(
                    f"inclusion explored more than {max_tuples} tuples")
            if self.a.is_final(cur.a_state) and not self.side.has_final(cur.b_set):
                # Put the tuple back so a restart can re-examine it.
                self.frontier.appendleft(cur)
                self.tuples_explored -= 1
                return cur.witness
            self.frontier_extend(cur, k)
        return None

    def frontier_extend(self, cur: _Tuple, k: int):
        for sym, a_next in _a_successors(self.a, cur.a_state):
            if sym is None:
                b_next = cur.b_set
                witness = cur.witness
            else:
                b_next = self.side.step(cur.b_set, sym)
                witness = cur.witness + (sym,)
            nxt = _Tuple(a_next, b_next, witness, dirty=cur.dirty)
            # Rule 1: skip successors an antichain member makes redundant.
            # A trimmed (dirty) tuple has an artificially small B-set and
            # is discarded on restart, so it may only prune other dirty
            # tuples; letting it prune clean tuples would lose paths that
            # no restart re-creates.
            if any(_dominates(p, nxt) and (not p.dirty or nxt.dirty)
                   for p in self.antichain):
                continue
            if any(not s.queues_within(k) for s in nxt.b_set):
                if not nxt.dirty:
                    self.overflow.append(
                        _Tuple(nxt.a_state, nxt.b_set, nxt.witness))
                nxt = _Tuple(nxt.a_state,
                             frozenset(s for s in nxt.b_set
                                       if s.queues_within(k)),
                             nxt.witness, dirty=True)
                if any(_dominates(p, nxt) for p in self.antichain):
                    continue
            self.frontier.append(nxt)
            # Rule 2: evict antichain members the new tuple dominates.
            self.antichain = [p for p in self.antichain
                              if not _dominates(nxt, p)]
            self.antichain.append(nxt)


def bounded_inclusion(a: Nfa, b: Nfa, ind: Independence, k: Optional[int],
                      max_tuples: int = 1_000_000,
                      timeout_s: Optional[float] = None) -> InclusionResult:
    """Single-round check L(A) subseteq Clo_{k,I}(L(B)); k=None is unbounded."""
    side = _ClosureSide(b, ind)
    search = SearchState(a, side)
    deadline = None if timeout_s is None else time.monotonic() + timeout_s
    bound = k if k is not None else float("inf")
    cex = search.run(bound, max_tuples, deadline)
    return InclusionResult(holds=cex is None, counterexample=cex,
                           k_reached=0 if k is None else k,
                           tuples_explored=search.tuples_explored)


def is_spurious(cex: tuple, b: Nfa, ind: Independence,
                max_tuples: int = 1_000_000) -> bool:
    """True iff cex is in the unbounded closure Clo_I(L(B)) — i.e. the
    counterexample only arose from the bound k, not a real violation."""
    trace = word_automaton(cex)
    res = bounded_inclusion(trace, b, ind, None, max_tuples=max_tuples)
    return res.holds


def inclusion_iterative(a: Nfa, b: Nfa, ind: Independence, k_start: int = 2,
                        k_max: int = 8, max_tuples: int = 1_000_000,
                        timeout_s: Optional[float] = None) -> InclusionResult:
    """Check L(A) subseteq Clo_I(L(B)) with incrementally increasing k.

    A "holds" verdict is sound for the unbounded closure; a returned
    counterexample is genuine (it fails the unbounded-closure membership
    test).  Raises BudgetExceeded if k_max, the tuple budget, or the
    timeout is hit first.
    """
    side = _ClosureSide(b, ind)
    search = SearchState(a, side)
    deadline = None if timeout_s is None else time.monotonic() + timeout_s
    k = k_start
    restarts = 0
    while True:
        cex = search.run(k, max_tuples, deadline)
        if cex is None:
            return InclusionResult(holds=True, k_reached=k,
                                   tuples_explored=search.tuples_explored,
                                   restarts=restarts)
        if not is_spurious(cex, b, ind, max_tuples=max_tuples):
            return InclusionResult(holds=False, counterexample=cex,
                                   k_reached=k,
                                   tuples_explored=search.tuples_explored,
                                   restarts=restarts)
        if k >= k_max:
            raise BudgetExceeded(
                f"no genuine counterexample found up to k = {k_max}")
        k += 1
        restarts += 1
        search.restart()
