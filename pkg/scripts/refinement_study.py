"""Discretization error under grid refinement.

For the quotient and isoperimetric problems on [0,1] the continuum extremals
are known in closed form; the sup-norm error should halve when the
resolution doubles.  The junction study reports the Euler-Lagrange form
deviations at the solved trajectory on [0,1] cup [2,3].

    python3 scripts/refinement_study.py [--resolutions 50 100 200 400]
"""

import argparse

import numpy as np

from tsvar.expr import parse
from tsvar.optimality import el_residuals
from tsvar.solver import solve_direct
from tsvar.timescale import make_timescale
from tsvar.varproblem import BoundarySpec, Integrand, IsoConstraint, VariationalProblem, functional

UNIT = make_timescale([(0, 1)])
SQRT3 = np.sqrt(3.0)


def quotient(res):
    return VariationalProblem(UNIT, res, functional("F1/F2", ["t*v"], ["v^2"]), boundary=BoundarySpec(0, 1))


def isoperimetric(res):
    c = IsoConstraint(parse("G1"), (Integrand.of("nabla", "t*v"),), 1.0)
    fn = functional("F1/F2", ["v^2"], ["t*v"])
    return VariationalProblem(UNIT, res, fn, boundary=BoundarySpec(0, 1), constraints=(c,))


def junctions(res):
    ts = make_timescale([(0, 1), (2, 3)])
    fn = functional("F1+F2", ["v^2 + t*y"], ["(v - 1)^2"])
    return VariationalProblem(ts, res, fn, boundary=BoundarySpec(0, None))


CASES = {
    "quotient": (quotient, lambda t: -(3 + 2 * SQRT3) * t**2 + (4 + 2 * SQRT3) * t),
    "isoperimetric": (isoperimetric, lambda t: 3 * t**2 - 2 * t),
}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--resolutions", type=int, nargs="+", default=[50, 100, 200, 400])
    args = ap.parse_args()

    for name, (make, exact) in CASES.items():
        print(f"{name}: resolution, sup error, ratio to previous, iterations")
        prev = None
        for r in args.resolutions:
            res = solve_direct(make(r))
            err = float(np.max(np.abs(res.x.values - exact(res.x.grid.nodes))))
            ratio = f"{err / prev:.3f}" if prev else "-"
            print(f"  {r:5d}  {err:.3e}  {ratio:>6s}  {res.iterations}")
            prev = err

    print("junctions on [0,1] cup [2,3]: resolution, nabla-form deviation, delta-form deviation, worst t (delta)")
    for r in args.resolutions:
        p = junctions(r)
        tr = el_residuals(p, solve_direct(p).x)
        vals = np.where(tr.valid_delta, tr.residual_delta.values - tr.mean_delta, 0.0)
        worst = p.grid.nodes[int(np.argmax(np.abs(vals)))]
        print(f"  {r:5d}  {tr.constancy_deviation_nabla:.3e}  {tr.constancy_deviation_delta:.3e}  {worst:g}")


if __name__ == "__main__":
    main()
