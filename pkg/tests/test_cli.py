"""Command-line interface: exit codes, report schema, determinism."""

import json

import pytest

from presync.cli import main

from conftest import PROGRAMS


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr().out
    return code, (json.loads(out) if out.strip() else None)


def wfile(name):
    return PROGRAMS / f"{name}.w"


def strip_timings(report):
    report = dict(report)
    report.pop("timings", None)
    return report


def test_verify_holds_exits_zero(capsys):
    code, report = run(capsys, "verify", wfile("disjoint_vars"))
    assert code == 0
    assert report["verdict"] == "holds"
    assert report["counterexample"] is None
    assert report["schema_version"] == 1


def test_verify_counterexample_exits_one(capsys):
    code, report = run(capsys, "verify", wfile("racy_increment"))
    assert code == 1
    assert report["verdict"] == "counterexample"
    assert report["counterexample"]
    assert all(isinstance(s, str) for s in report["counterexample"])


def test_verify_budget_exhausted_exits_two(capsys, tmp_path):
    code, report = run(capsys, "verify", wfile("running_example"),
                       "--budget-tuples", "5")
    assert code == 2
    assert report["verdict"] == "budget-exhausted"


def test_parse_error_exits_three(capsys, tmp_path):
    bad = tmp_path / "bad.w"
    bad.write_text("thread t { 1: x = ; }")
    assert main([str(a) for a in ("verify", bad)]) == 3
    assert main(["verify", str(tmp_path / "missing.w")]) == 3


def test_synthesize_success_report(capsys, tmp_path):
    out = tmp_path / "report.json"
    prog_out = tmp_path / "fixed.w"
    code = main(["synthesize", str(wfile("racy_increment")),
                 "--out", str(out), "--emit-program", str(prog_out)])
    assert code == 0
    report = json.loads(out.read_text())
    assert report["verdict"] == "success"
    assert report["fixes"][0]["kind"] == "lock"
    assert report["fixes"][0]["text"] == "lock(T1.[1:1], T2.[1:1])"
    assert report["iterations"][0]["constraint"]
    assert "synth_lock_1" in prog_out.read_text()


def test_synthesize_reorder_fix_kind(capsys):
    code, report = run(capsys, "synthesize", wfile("early_signal"))
    assert code == 0
    assert report["fixes"] == [{
        "kind": "reorder", "thread": 1, "signal_label": "1",
        "after_label": "2", "text": "reorder(T1.1 after T1.2)"}]


def test_enumerate_lists_sequences(capsys):
    code, report = run(capsys, "enumerate", wfile("disjoint_vars"),
                       "--level", "abstract", "--sched", "np")
    assert code == 0
    assert report["count"] == len(report["sequences"]) > 0


def test_dump_automata_has_both_modes(capsys):
    code, report = run(capsys, "dump-automata", wfile("racy_increment"))
    assert code == 0
    assert set(report["automata"]) == {"np", "p"}
    for mode in ("np", "p"):
        dump = report["automata"][mode]
        assert dump["states"] and dump["edges"] is not None


@pytest.mark.parametrize("argv", [
    ("verify", "running_example"),
    ("synthesize", "racy_increment"),
    ("enumerate", "disjoint_vars"),
])
def test_reports_are_deterministic(capsys, argv):
    cmd, name = argv
    code1, rep1 = run(capsys, cmd, wfile(name))
    code2, rep2 = run(capsys, cmd, wfile(name))
    assert code1 == code2
    assert strip_timings(rep1) == strip_timings(rep2)
