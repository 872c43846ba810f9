#!/usr/bin/env python3
"""Run verification and synthesis over every program in programs/ and
print a one-line summary per program."""

import argparse
import pathlib
import sys
import time

from presync.synthesis import SynthesisConfig, synthesize
from presync.wlang import parse_program


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--programs", default=None,
                        help="directory of .w files (default: programs/ "
                             "next to the repository root)")
    parser.add_argument("--unroll", type=int, default=1)
    parser.add_argument("--k-max", type=int, default=8)
    args = parser.parse_args()

    root = pathlib.Path(args.programs) if args.programs else \
        pathlib.Path(__file__).resolve().parent.parent / "programs"
    failures = 0
    for path in sorted(root.glob("*.w")):
        program = parse_program(path.read_text())
        t0 = time.monotonic()
        try:
            _, report = synthesize(
                program, SynthesisConfig(unroll=args.unroll,
                                         k_max=args.k_max))
        except Exception as exc:  # report and keep going
            print(f"{path.name:24s} ERROR {type(exc).__name__}: {exc}")
            failures += 1
            continue
        dt = time.monotonic() - t0
        fixes = [str(f) for it in report.iterations for f in it.fixes]
        status = report.verdict
        if report.verdict != "success":
            failures += 1
        print(f"{path.name:24s} {status:12s} iters={len(report.iterations)} "
              f"fixes={fixes} warnings={report.warnings} ({dt:.1f}s)")
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
