"""Command-line interface: verify, synthesize, enumerate, dump-automata.

Exit codes
    verify:      0 property holds, 1 counterexample found, 2 budget
                 exhausted, 3 input/parse error.
    synthesize:  0 success, 1 no applicable fix pattern or placement
                 failure, 2 budget exhausted, 3 input/parse error.
    enumerate / dump-automata: 0 on success, 3 on input/parse error.

Reports are JSON with a fixed schema version; all fields except the
"timings" block are deterministic for a given input and flags.
"""

from __future__ import annotations

import argparse
import json
import sys
import time

from .automata import abstract_independence, build_abstract_automaton
from .inclusion import BudgetExceeded, inclusion_iterative
from .semantics import enumerate_sequences
from .synthesis import SynthesisConfig, detect_deadlocks, synthesize
from .wlang import WSemanticError, WSyntaxError, parse_program, pretty_print

REPORT_SCHEMA = 1

EXIT_OK = 0
EXIT_NEGATIVE = 1
EXIT_BUDGET = 2
EXIT_INPUT = 3


def _read_program(path: str):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise WSyntaxError(f"cannot read {path}: {exc}")
    return parse_program(text)


def _emit(report: dict, out: str | None):
    text = json.dumps(report, indent=2, sort_keys=True)
    if out:
        with open(out, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def _base_report(args, command: str) -> dict:
    return {
        "schema_version": REPORT_SCHEMA,
        "command": command,
        "program": args.program,
        "timings": {},
    }


def _fix_json(fix) -> dict:
    if hasattr(fix, "ranges"):
        return {"kind": "lock",
                "ranges": [{"thread": t, "from": lo, "to": hi}
                           for t, lo, hi in fix.ranges],
                "text": str(fix)}
    return {"kind": "reorder", "thread": fix.tid,
            "signal_label": fix.signal_label,
            "after_label": fix.after_label, "text": str(fix)}


def cmd_verify(args) -> int:
    report = _base_report(args, "verify")
    t0 = time.monotonic()
    program = _read_program(args.program)
    report["timings"]["parse"] = time.monotonic() - t0

    t0 = time.monotonic()
    a_p = build_abstract_automaton(program, "p", args.unroll)
    a_np = build_abstract_automaton(program, "np", args.unroll)
    report["timings"]["automata"] = time.monotonic() - t0

    t0 = time.monotonic()
    try:
        res = inclusion_iterative(a_p, a_np, abstract_independence,
                                  k_start=args.k_start, k_max=args.k_max,
                                  max_tuples=args.budget_tuples,
                                  timeout_s=args.timeout_s)
    except BudgetExceeded as exc:
        report["timings"]["inclusion"] = time.monotonic() - t0
        report.update(verdict="budget-exhausted", reason=str(exc))
        _emit(report, args.out)
        return EXIT_BUDGET
    report["timings"]["inclusion"] = time.monotonic() - t0
    report.update(
        verdict="holds" if res.holds else "counterexample",
        k_max_reached=res.k_reached,
        tuples_explored=res.tuples_explored,
        restarts=res.restarts,
        counterexample=(None if res.holds else
                        [str(s) for s in res.counterexample]),
    )
    _emit(report, args.out)
    return EXIT_OK if res.holds else EXIT_NEGATIVE


def cmd_synthesize(args) -> int:
    report = _base_report(args, "synthesize")
    t0 = time.monotonic()
    program = _read_program(args.program)
    report["timings"]["parse"] = time.monotonic() - t0

    config = SynthesisConfig(unroll=args.unroll, k_start=args.k_start,
                             k_max=args.k_max, max_tuples=args.budget_tuples,
                             timeout_s=args.timeout_s,
                             max_iterations=args.iterations)
    t0 = time.monotonic()
    try:
        fixed, syn = synthesize(program, config)
    except BudgetExceeded as exc:
        report["timings"]["synthesis"] = time.monotonic() - t0
        report.update(verdict="budget-exhausted", reason=str(exc))
        _emit(report, args.out)
        return EXIT_BUDGET
    report["timings"]["synthesis"] = time.monotonic() - t0

    report.update(
        verdict=syn.verdict,
        k_max_reached=max((it.k_reached for it in syn.iterations), default=0),
        iterations=[{
            "counterexample": [str(s) for s in it.counterexample],
            "constraint": str(it.rho_g),
            "fixes": [_fix_json(f) for f in it.fixes],
            "k_reached": it.k_reached,
            "tuples_explored": it.tuples_explored,
        } for it in syn.iterations],
        fixes=[_fix_json(f) for it in syn.iterations for f in it.fixes],
        warnings=list(syn.warnings),
        detail=syn.detail,
        fixed_program=(pretty_print(fixed) if syn.verdict == "success"
                       else None),
    )
    _emit(report, args.out)
    if syn.verdict == "success":
        if args.emit_program and report["fixed_program"]:
            with open(args.emit_program, "w") as fh:
                fh.write(report["fixed_program"])
        return EXIT_OK
    if syn.verdict == "budget":
        return EXIT_BUDGET
    return EXIT_NEGATIVE


def cmd_enumerate(args) -> int:
    report = _base_report(args, "enumerate")
    t0 = time.monotonic()
    program = _read_program(args.program)
    report["timings"]["parse"] = time.monotonic() - t0

    domain = tuple(int(v) for v in args.domain.split(","))
    t0 = time.monotonic()
    seqs = enumerate_sequences(program, sched=args.sched, level=args.level,
                               max_steps=args.max_steps, domain=domain,
                               unroll=args.unroll)
    report["timings"]["enumeration"] = time.monotonic() - t0
    words = sorted({tuple(str(o) for o in seq) for seq in seqs})
    report.update(verdict="ok", count=len(words),
                  sequences=[list(w) for w in words[:args.limit]])
    _emit(report, args.out)
    return EXIT_OK


def cmd_dump_automata(args) -> int:
    report = _base_report(args, "dump-automata")
    t0 = time.monotonic()
    program = _read_program(args.program)
    report["timings"]["parse"] = time.monotonic() - t0

    t0 = time.monotonic()
    out = {}
    for mode in ("np", "p"):
        nfa = build_abstract_automaton(program, mode, args.unroll)
        out[mode] = nfa.dump(limit=args.limit)
    report["timings"]["automata"] = time.monotonic() - t0
    report.update(verdict="ok", automata=out)
    _emit(report, args.out)
    return EXIT_OK


def _add_common(sub):
    sub.add_argument("program", help="path to a .w program")
    sub.add_argument("--unroll", type=int, default=1,
                     help="loop unrolling bound for the abstraction")
    sub.add_argument("--out", default=None,
                     help="write the JSON report to this file")


def _add_budget(sub):
    sub.add_argument("--k-start", type=int, default=2)
    sub.add_argument("--k-max", type=int, default=8)
    sub.add_argument("--budget-tuples", type=int, default=1_000_000)
    sub.add_argument("--timeout-s", type=float, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="presync",
        description="Verify and repair synchronization in concurrent "
                    "while-programs.")
    subs = parser.add_subparsers(dest="command", required=True)

    v = subs.add_parser("verify", help="check preemptive behavior is "
                        "equivalent to some non-preemptive behavior")
    _add_common(v)
    _add_budget(v)
    v.set_defaults(func=cmd_verify)

    s = subs.add_parser("synthesize", help="insert locks / move signals "
                        "until the program verifies")
    _add_common(s)
    _add_budget(s)
    s.add_argument("--iterations", type=int, default=20,
                   help="maximum repair iterations")
    s.add_argument("--emit-program", default=None,
                   help="write the repaired program to this file")
    s.set_defaults(func=cmd_synthesize)

    e = subs.add_parser("enumerate", help="enumerate observable sequences")
    _add_common(e)
    e.add_argument("--sched", choices=["np", "p"], default="np")
    e.add_argument("--level", choices=["concrete", "abstract"],
                   default="abstract")
    e.add_argument("--domain", default="0,1",
                   help="comma-separated value domain for concrete runs")
    e.add_argument("--max-steps", type=int, default=200)
    e.add_argument("--limit", type=int, default=200,
                   help="maximum sequences included in the report")
    e.set_defaults(func=cmd_enumerate)

    d = subs.add_parser("dump-automata",
                        help="dump the abstract automata as JSON")
    _add_common(d)
    d.add_argument("--limit", type=int, default=10_000,
                   help="maximum states to materialize per automaton")
    d.set_defaults(func=cmd_dump_automata)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (WSyntaxError, WSemanticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
