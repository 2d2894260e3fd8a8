from pathlib import Path

import numpy as np
import pytest

from tsvar.expr import parse
from tsvar.timescale import make_timescale
from tsvar.varproblem import BoundarySpec, Integrand, IsoConstraint, VariationalProblem, functional

PROBLEMS = Path(__file__).resolve().parent.parent / "problems"

SQRT2, SQRT3 = np.sqrt(2.0), np.sqrt(3.0)
HALF = make_timescale([(0, 0), (0.5, 0.5), (1, 1)])
UNIT = make_timescale([(0, 1)])


def quotient(ts=HALF, resolution=1):
    """min int t x^D / int (x^N)^2, x(0)=0, x(1)=1."""
    return VariationalProblem(ts, resolution, functional("F1/F2", ["t*v"], ["v^2"]), boundary=BoundarySpec(0, 1))


def autonomous(ts=None, resolution=50):
    """min int (x^D)^2 / int x^N + (x^N)^2, x(0)=0, x(2)=4."""
    ts = make_timescale([(0, 2)]) if ts is None else ts
    return VariationalProblem(ts, resolution, functional("F1/F2", ["v^2"], ["v + v^2"]), boundary=BoundarySpec(0, 4))


def product(ts=HALF, resolution=1):
    """min (int t x^D)(int (1+t) x^D)(int (x^N)^2), x(0)=0, x(1)=1."""
    fn = functional("F1*F2*F3", ["t*v", "v*(1 + t)"], ["v^2"])
    return VariationalProblem(ts, resolution, fn, boundary=BoundarySpec(0, 1))


def isoperimetric(ts=HALF, resolution=1):
    """int (x^D)^2 / int t x^N subject to int t x^N = 1, x(0)=0, x(1)=1."""
    c = IsoConstraint(parse("G1"), (Integrand.of("nabla", "t*v"),), 1.0)
    return VariationalProblem(
        ts, resolution, functional("F1/F2", ["v^2"], ["t*v"]), boundary=BoundarySpec(0, 1), constraints=(c,)
    )


@pytest.fixture
def problems_dir():
    return PROBLEMS


# one "criterion N: PASS/FAIL" line per acceptance test, shown at the end of the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
