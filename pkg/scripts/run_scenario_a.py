#!/usr/bin/env python3
"""Replicated benchmark on scenario A, desk scale by default.

Desk scale reproduces the direction of the published comparison in a few
minutes: TV-Select against the ridge-only, group-only, and screen+refit
baselines under EBIC tuning on paired data.  --full switches to the
smallest full-dimensional configuration (p=100, s_v=s_c=6, R=200), which
takes hours; bring a book.

    python scripts/run_scenario_a.py --out results/ [--full] [--parallel K]
"""

import argparse
import os
import sys
import time

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from tvselect.simulate import StudyOptions, format_summary, make_scenario, run_study


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="scenario_a_results")
    ap.add_argument("--full", action="store_true",
                    help="(N,n_i,p)=(100,5,100), s_v=s_c=6, R=200")
    ap.add_argument("--replications", type=int, default=None)
    ap.add_argument("--seed", type=int, default=20240501)
    ap.add_argument("--parallel", type=int, default=os.cpu_count() or 1)
    args = ap.parse_args()

    if args.full:
        spec = make_scenario("A", N=100, n_i=5, p=100, s_v=6, s_c=6, q=12)
        R = args.replications or 200
    else:
        spec = make_scenario("A", N=100, n_i=5, p=20, s_v=3, s_c=3, q=12)
        R = args.replications or 30

    os.makedirs(args.out, exist_ok=True)
    t0 = time.time()
    reports = run_study(spec, R=R, seed=args.seed, parallelism=args.parallel,
                        options=StudyOptions())
    elapsed = time.time() - t0

    print(format_summary(reports))
    print(f"\n{R} replications in {elapsed:.0f}s "
          f"({args.parallel} worker{'s' if args.parallel > 1 else ''})")

    path = os.path.join(args.out, "metrics.csv")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("scenario,config,method,metric,mean,se\n")
        for rep in reports:
            for row in rep.rows():
                fh.write(",".join(str(c) if isinstance(c, str) else f"{c:.17g}"
                                  for c in row) + "\n")
    print(f"wrote {path}")


if __name__ == "__main__":
    main()
