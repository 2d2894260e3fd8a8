from fractions import Fraction

import numpy as np
import pytest

from tsvar.expr import parse
from tsvar.gridfn import GridFunction
from tsvar.optimality import (
    compute_u_w,
    compute_xi_chi,
    default_tolerance,
    deviation,
    el_residuals,
    el_residuals_differ_on_irregular,
    iso_conditions,
    transversality,
)
from tsvar.timescale import make_timescale
from tsvar.varproblem import BoundarySpec, Integrand, IsoConstraint, VariationalProblem, functional, objective_value

from conftest import HALF, SQRT2, UNIT, autonomous, isoperimetric, product, quotient

P11 = make_timescale([(0, 1), (2, 3)])


def test_deviation():
    v = np.array([1.0, 3.0, 100.0])
    assert deviation(v, np.array([True, True, False])) == 1.0
    assert deviation(v, np.zeros(3, bool)) == 0.0


def test_default_tolerance():
    assert default_tolerance(quotient().grid) == 1e-6
    assert default_tolerance(quotient(UNIT, 50).grid) == pytest.approx(0.1)


def test_linear_extremal_any_time_scale():
    for p in (autonomous(), autonomous(make_timescale([(0, 0), (1, 1), (2, 2)]), 1)):
        tr = el_residuals(p, GridFunction.sample(p.grid, lambda t: 2 * t))
        assert tr.constancy_deviation_nabla < 1e-9 and tr.constancy_deviation_delta < 1e-9


def test_discrete_quotient_extremal():
    p = quotient()
    tr = el_residuals(p, [0.0, 1 + SQRT2 / 2, 1.0])
    assert tr.constancy_deviation_nabla < 1e-12 and tr.constancy_deviation_delta < 1e-12
    # xi at b and chi at a use copied derivatives and are excluded
    assert list(tr.valid_nabla) == [False, True, True]
    assert list(tr.valid_delta) == [True, True, False]


def _perturbed_oracle(s):
    """Hand derivation on {0, 1/2, 1}, x = (0, s, 1), F1 = int t x^D, F2 = int (x^N)^2.

    F1 = (1 - s)/2, F2 = 2 s^2 + 2 (1 - s)^2; both forms take the two values
    4 s H2' and H1'/2 + 4 (1 - s) H2' with H1' = 1/F2, H2' = -F1/F2^2.
    """
    s = Fraction(s)
    f1 = (1 - s) / 2
    f2 = 2 * s**2 + 2 * (1 - s) ** 2
    h1, h2 = 1 / f2, -f1 / f2**2
    first, second = 4 * s * h2, h1 / 2 + 4 * (1 - s) * h2
    dev = abs(first - second) / 2
    return float(dev), float(dev / max(abs(first), abs(second)))


def test_perturbed_extremal_detected():
    s = 1 + SQRT2 / 2 + 0.1
    p = quotient()
    tr = el_residuals(p, [0.0, s, 1.0])
    dev, rel = _perturbed_oracle(s)
    assert dev == pytest.approx(2.4672e-3, abs=1e-7)
    assert tr.constancy_deviation_nabla == pytest.approx(dev, rel=1e-12)
    assert tr.constancy_deviation_delta == pytest.approx(dev, rel=1e-12)
    assert tr.relative_deviation_nabla == pytest.approx(rel, rel=1e-12)
    assert tr.relative_deviation_nabla > 1e-2
    assert _perturbed_oracle(1 + SQRT2 / 2)[0] < 1e-15


def test_forms_coincide_on_interval():
    rng = np.random.default_rng(3)
    for p in (quotient(UNIT, 30), product(UNIT, 30), autonomous(resolution=30)):
        x = p.linear_initializer().values + 0.2 * rng.standard_normal(p.grid.size)
        x[[0, -1]] = p.linear_initializer().values[[0, -1]]
        assert el_residuals_differ_on_irregular(p, x) < 1e-9


def test_forms_differ_at_junctions():
    # x = t^2 on [0,1] cup [2,3], f1 = (x^D)^2 delta, f2 = x^rho x^N nabla
    p = VariationalProblem(P11, 20, functional("F1+F2", ["v^2"], ["y*v"]))
    tr = el_residuals(p, GridFunction.sample(p.grid, lambda t: t**2))
    gap = np.abs(tr.residual_nabla.values - tr.residual_delta.values)
    both = tr.valid_nabla & tr.valid_delta
    t = p.grid.nodes
    for junction in (1.0, 2.0):
        j = int(np.flatnonzero(t == junction)[0])
        assert both[j] and gap[j] > 1e-3
    assert np.max(gap[both & (t != 1.0) & (t != 2.0)]) < 1e-12


def test_xi_chi_example():
    p = quotient()
    s = 1 + SQRT2 / 2
    xi, chi = compute_xi_chi(p, [0.0, s, 1.0])
    f2 = 2 * s**2 + 2 * (1 - s) ** 2
    assert xi.values[:2] == pytest.approx([0.0, 0.5 / f2])
    assert chi.values[1] == pytest.approx(-4 * s * ((1 - s) / 2) / f2**2)


def _free(p, a=True, b=True):
    bs = BoundarySpec(None if a else p.boundary.at_a, None if b else p.boundary.at_b)
    return VariationalProblem(p.timescale, p.resolution, p.objective, p.sense, bs, p.constraints)


@pytest.mark.parametrize("make", [lambda: quotient(UNIT, 20), lambda: product(), lambda: autonomous(resolution=10)])
def test_transversality_is_endpoint_derivative(make):
    p = _free(make())
    rng = np.random.default_rng(0)
    x = p.linear_initializer().values + 0.1 * rng.standard_normal(p.grid.size) + 0.5
    rep = transversality(p, x)
    assert rep.hypothesis_initial_ok and rep.hypothesis_terminal_ok
    for j, res in ((0, rep.initial_residual), (-1, rep.terminal_residual)):
        step = 1e-6
        hi, lo = x.copy(), x.copy()
        hi[j] += step
        lo[j] -= step
        fd = (objective_value(p, hi) - objective_value(p, lo)) / (2 * step)
        assert abs(abs(res) - abs(fd)) < 1e-6 * max(1.0, abs(fd))


def test_transversality_fixed_ends():
    rep = transversality(quotient(), [0.0, 1.0, 1.0])
    assert rep.initial_residual is None and rep.terminal_residual is None
    rep = transversality(_free(quotient(), a=False), [0.0, 1.0, 1.0])
    assert rep.initial_residual is None and rep.terminal_residual is not None


def test_u_w_example():
    p = isoperimetric()
    u, w = compute_u_w(p.constraints[0], p.grid, [0.0, 0.0, 1.0])
    assert np.all(u.values == 0)
    assert w.values[1:] == pytest.approx([0.5, 1.0])


def test_iso_lambda_discrete():
    tr = iso_conditions(isoperimetric(), [0.0, 0.0, 1.0])
    assert tr.normal and tr.lambda_defined
    assert tr.lam == pytest.approx(6.0, abs=1e-12)
    assert max(tr.condition_deviations) < 1e-12


def test_iso_lambda_interval():
    p = isoperimetric(UNIT, 1000)
    tr = iso_conditions(p, GridFunction.sample(p.grid, lambda t: 3 * t**2 - 2 * t))
    assert abs(tr.lam - 8) < 1e-2
    assert max(tr.condition_deviations) < default_tolerance(p.grid)


def test_iso_lambda_scales_with_constraint():
    p = isoperimetric()
    c2 = IsoConstraint(parse("G1"), (Integrand.of("nabla", "2*t*v"),), 2.0)
    q = VariationalProblem(p.timescale, 1, p.objective, boundary=p.boundary, constraints=(c2,))
    assert iso_conditions(q, [0.0, 0.0, 1.0]).lam == pytest.approx(3.0, abs=1e-12)


def test_iso_abnormal():
    # int x^N = x(b) - x(a) is fixed by the boundary, so its forms are constant
    c = IsoConstraint(parse("G1"), (Integrand.of("nabla", "v"),), 1.0)
    p = VariationalProblem(UNIT, 20, functional("F1/F2", ["v^2"], ["t*v"]), boundary=BoundarySpec(0, 1), constraints=(c,))
    tr = iso_conditions(p, p.linear_initializer())
    assert not tr.normal and not tr.lambda_defined
    assert np.isnan(tr.lam) and all(np.isnan(tr.condition_deviations))
