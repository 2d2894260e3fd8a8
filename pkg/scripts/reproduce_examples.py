"""Solve every checked-in problem file and print a summary table.

    python3 scripts/reproduce_examples.py [--problems DIR]
"""

import argparse
import time
from pathlib import Path

from tsvar.cli import load_problem, residual_report
from tsvar.solver import solve_direct

ROOT = Path(__file__).resolve().parent.parent


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--problems", type=Path, default=ROOT / "problems")
    args = ap.parse_args()

    header = f"{'problem':28s} {'nodes':>5s} {'status':>15s} {'objective':>12s} {'lambda':>10s} {'verdict':>22s} {'sec':>6s}"
    print(header)
    print("-" * len(header))
    for path in sorted(args.problems.glob("*.txt")):
        pf = load_problem(path)
        t0 = time.perf_counter()
        res = solve_direct(pf.problem, pf.options)
        sec = time.perf_counter() - t0
        verdict = residual_report(pf, res.x)["verdict"]
        lam = f"{res.lambda_estimate:10.6f}" if pf.problem.constraints else f"{'-':>10s}"
        print(
            f"{path.stem:28s} {pf.problem.grid.size:5d} {res.status:>15s} {res.objective:12.7f} {lam} {verdict:>22s} {sec:6.2f}"
        )


if __name__ == "__main__":
    main()
