"""Counterexample analysis, fix inference, program rewriting, and the
end-to-end repair loop."""

import math

import pytest

from presync.automata import build_abstract_automaton
from presync.inclusion import BudgetExceeded
from presync.semantics import AbstractObservable
from presync.synthesis import (
    And, Atom, EventId, LockFix, PlacementFailure, ReorderFix,
    SynthesisConfig, apply_reorder, classify_traces, detect_deadlocks,
    events_of_trace, generalize, infer_fixes, neighborhood, place_locks,
    synthesize,
)
from presync.wlang import Location, Signal, parse_program, pretty_print, walk

from conftest import load


def obs(t, access, var, label):
    return AbstractObservable(t, access, var, Location(t, label))


def section2_counterexample():
    """The racy double power-up trace of the running example: thread 2's
    read of `open` lands inside thread 1's read-modify-write."""
    A = lambda t: obs(t, "read", "open", "2")     # noqa: E731
    B = lambda t: obs(t, "write", "dev:dev", "3")  # noqa: E731
    C = lambda t: obs(t, "read", "open", "5")     # noqa: E731
    D = lambda t: obs(t, "write", "open", "5")    # noqa: E731
    return events_of_trace((A(1), A(2), B(1), C(1), D(1), B(2), C(2), D(2)))


# --- events and neighborhood -----------------------------------------------

def test_event_ids_count_occurrences():
    cex = section2_counterexample()
    names = [str(ev.eid) for ev in cex]
    assert names == ["T1.2", "T2.2", "T1.3", "T1.5", "T1.5#2",
                     "T2.3", "T2.5", "T2.5#2"]


def test_neighborhood_is_the_binomial_interleaving_count():
    one = events_of_trace((obs(1, "write", "x", "1"),
                           obs(2, "read", "x", "1"),
                           obs(2, "write", "x", "1"),
                           obs(2, "read", "y", "2")))
    assert len(neighborhood(one)) == math.comb(4, 1)
    cex = section2_counterexample()
    assert len(neighborhood(cex)) == math.comb(8, 4) == 70


def test_neighborhood_cap():
    big = events_of_trace(tuple(obs(t, "read", "x", str(i))
                                for t in (1, 2) for i in range(12)))
    with pytest.raises(BudgetExceeded):
        neighborhood(big, cap=1000)


# --- classification and generalization -------------------------------------

@pytest.fixture(scope="module")
def running_example_automata():
    p = parse_program(load("running_example"))
    return (build_abstract_automaton(p, "np", 1),
            build_abstract_automaton(p, "p", 1))


def test_np_feasible_traces_are_the_two_serial_orders(
        running_example_automata):
    a_np, a_p = running_example_automata
    cex = section2_counterexample()
    nhood = neighborhood(cex)
    np_feasible, p_feasible, bad = classify_traces(nhood, a_np, a_p)
    serial = {tuple(str(e.eid) for e in t) for t in np_feasible}
    assert serial == {
        ("T1.2", "T1.3", "T1.5", "T1.5#2", "T2.2", "T2.3", "T2.5", "T2.5#2"),
        ("T2.2", "T2.3", "T2.5", "T2.5#2", "T1.2", "T1.3", "T1.5", "T1.5#2"),
    }
    assert cex in bad
    assert bad <= p_feasible
    assert not (bad & np_feasible)


def test_generalized_constraint_of_the_racy_trace(running_example_automata):
    a_np, a_p = running_example_automata
    cex = section2_counterexample()
    nhood = neighborhood(cex)
    _, p_feasible, bad = classify_traces(nhood, a_np, a_p)
    rho_g = generalize(cex, bad, p_feasible)
    assert str(rho_g) == "T2.2 < T1.5#2 && T1.5#2 < T2.5#2"


# --- fix inference ----------------------------------------------------------

def test_lock_pattern_infers_asymmetric_ranges():
    rho = And((Atom(EventId(2, "2", 1), EventId(1, "5", 2)),
               Atom(EventId(1, "5", 2), EventId(2, "5", 2))))
    p = parse_program(load("running_example"))
    fixes = infer_fixes(rho, p)
    assert [str(f) for f in fixes] == ["lock(T1.[5:5], T2.[2:5])"]


def test_crossing_pattern_infers_spanning_lock():
    # t1.1 < t2.2 and t2.1 < t1.2: both atoms point the same way, so the
    # paired-events reading gives each thread the span [1:2].
    rho = And((Atom(EventId(1, "1", 1), EventId(2, "2", 1)),
               Atom(EventId(2, "1", 1), EventId(1, "2", 1))))
    p = parse_program(load("crossing_update"))
    fixes = infer_fixes(rho, p)
    assert "lock(T1.[1:2], T2.[1:2])" in [str(f) for f in fixes]


def test_order_invalid_ranges_are_rejected():
    # A range whose endpoints are reversed in program order matches no
    # lock pattern.
    rho = And((Atom(EventId(1, "2", 1), EventId(2, "1", 1)),
               Atom(EventId(2, "2", 1), EventId(1, "1", 1))))
    p = parse_program(load("crossing_update"))
    assert infer_fixes(rho, p) == []


def test_reorder_pattern_matches_await_signal():
    # consumer reads data (label 4) before producer writes it (label 2),
    # with await(ready)@3 before the read and signal(ready)@1 before the
    # write: move the signal after the write.
    rho = And((Atom(EventId(2, "4", 1), EventId(1, "2", 1)),))
    p = parse_program(load("early_signal"))
    fixes = infer_fixes(rho, p)
    assert [str(f) for f in fixes] == ["reorder(T1.1 after T1.2)"]


# --- program rewriting ------------------------------------------------------

def test_place_locks_wraps_range_and_declares_lock():
    p = parse_program(load("running_example"))
    fixed = place_locks(p, [("g", {1: ("2", "5"), 2: ("2", "5")})])
    assert any(d.name == "g" and d.kind == "lock" for d in fixed.decls)
    text = pretty_print(fixed)
    assert text.index("lock(g);") < text.index("if (open == 0)")
    assert text.index("open = open + 1;") < text.index("unlock(g);")
    # The yield stays outside the critical section.
    body = text[text.index("unlock(g);"):]
    assert "yield;" in body


def test_place_locks_refuses_span_with_preemption_point():
    p = parse_program(load("running_example"))
    with pytest.raises(PlacementFailure):
        place_locks(p, [("g", {1: ("2", "6"), 2: ("2", "5")})])  # crosses yield


def test_apply_reorder_moves_signal():
    p = parse_program(load("early_signal"))
    fixed = apply_reorder(p, ReorderFix(1, "1", "2"))
    labels = [s.loc.label for s in walk(fixed.threads[0])
              if s.loc is not None]
    assert labels == ["2", "1"]
    assert isinstance(
        [s for s in walk(fixed.threads[0]) if s.loc is not None][1], Signal)


def test_apply_reorder_refuses_crossing_preemption_points():
    src = """
    var data; cond ready;
    thread producer { 1: signal(ready); 2: yield; 3: data = 1; }
    thread consumer { 4: await(ready); 5: data = 2; }
    """
    p = parse_program(src)
    with pytest.raises(PlacementFailure):
        apply_reorder(p, ReorderFix(1, "1", "3"))


# --- deadlock detection ------------------------------------------------------

def test_opposite_lock_order_is_reported():
    src = """
    var x; lock m; lock n;
    thread a { 1: lock(m); 2: lock(n); 3: x = 1; 4: unlock(n); 5: unlock(m); }
    thread b { 1: lock(n); 2: lock(m); 3: x = 2; 4: unlock(m); 5: unlock(n); }
    """
    warnings = detect_deadlocks(parse_program(src))
    assert any("cycle" in w for w in warnings)
    assert any("blocked" in w for w in warnings)


def test_consistent_lock_order_is_clean():
    assert detect_deadlocks(parse_program(load("locked_increment"))) == []


# --- end-to-end repair -------------------------------------------------------

def test_repairs_racy_increment_with_one_lock():
    p = parse_program(load("racy_increment"))
    fixed, report = synthesize(p, SynthesisConfig())
    assert report.verdict == "success"
    assert [str(f) for it in report.iterations for f in it.fixes] == \
        ["lock(T1.[1:1], T2.[1:1])"]
    assert report.warnings == []
    text = pretty_print(fixed)
    assert text.count("s1: lock(synth_lock_1);") == 2
    assert text.count("s2: unlock(synth_lock_1);") == 2


def test_repairs_early_signal_with_reorder():
    p = parse_program(load("early_signal"))
    fixed, report = synthesize(p, SynthesisConfig())
    assert report.verdict == "success"
    assert [str(f) for it in report.iterations for f in it.fixes] == \
        ["reorder(T1.1 after T1.2)"]
    # No locks were introduced.
    assert all(d.kind != "lock" for d in fixed.decls)


def test_safe_programs_need_no_iterations():
    for name in ("locked_increment", "disjoint_vars", "handshake_safe"):
        p = parse_program(load(name))
        fixed, report = synthesize(p, SynthesisConfig())
        assert report.verdict == "success"
        assert report.iterations == []
        assert fixed == p


def test_three_thread_race_merges_into_one_global_lock():
    p = parse_program(load("three_way_race"))
    fixed, report = synthesize(p, SynthesisConfig())
    assert report.verdict == "success"
    assert len(report.iterations) == 2
    locks = {d.name for d in fixed.decls if d.kind == "lock"}
    assert locks == {"synth_lock_1"}
    assert pretty_print(fixed).count("s1: lock(synth_lock_1);") == 3
