"""Residuals of the first-order necessary conditions.

The Euler-Lagrange conditions are checked in integral form: with

    xi(t)  = sum over delta integrands of H'_i (f_iv(t) - int_a^t f_iy Delta)
    chi(t) = sum over nabla integrands of H'_i (f_iv(t) - int_a^t f_iy nabla)

an extremizer makes ``xi(rho(t)) + chi(t)`` constant on T_kappa (nabla form)
and ``xi(t) + chi(sigma(t))`` constant on T^kappa (delta form).  Shifts use
the exact jump operators of the time scale, so on dense stretches both forms
read ``xi(t) + chi(t)``.

Nodes whose value depends on a boundary-copied derivative are skipped.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gridfn import GridFunction, cumulative_delta, cumulative_nabla
from .timescale import Grid, in_kappa_lower, in_kappa_upper, rho, sigma
from .varproblem import (
    CompositionFunctional,
    FunctionalEvaluation,
    IsoConstraint,
    VariationalProblem,
    evaluate_functional,
)

ABNORMAL_TOL = 1e-8


class OptimalityError(ValueError):
    pass


def deviation(values: np.ndarray, mask: np.ndarray) -> float:
    """Max distance from the mean over the masked nodes."""
    v = values[mask]
    if v.size == 0:
        return 0.0
    return float(np.max(np.abs(v - v.mean())))


def default_tolerance(grid: Grid) -> float:
    """Constancy tolerance: 1e-6 on purely discrete scales, 5/resolution otherwise."""
    has_dense = any(lo < hi for lo, hi in grid.timescale.segments)
    return 5.0 / grid.dense_resolution if has_dense else 1e-6


@dataclass(frozen=True)
class AuxPair:
    """A delta-side and a nabla-side auxiliary function with validity masks."""

    delta_part: np.ndarray
    nabla_part: np.ndarray
    delta_ok: np.ndarray
    nabla_ok: np.ndarray


def _aux(fn: CompositionFunctional, grid: Grid, ev: FunctionalEvaluation) -> AuxPair:
    dpart = np.zeros(grid.size)
    npart = np.zeros(grid.size)
    for hp, tr in zip(ev.outer_partials, ev.traces):
        if tr.kind == "delta":
            dpart += hp * (tr.fv - cumulative_delta(grid, tr.fy))
        else:
            npart += hp * (tr.fv - cumulative_nabla(grid, tr.fy))
    dok = np.ones(grid.size, dtype=bool)
    nok = np.ones(grid.size, dtype=bool)
    if fn.k:
        dok[-1] = False
    if fn.n:
        nok[0] = False
    return AuxPair(dpart, npart, dok, nok)


def _kappa_masks(grid: Grid) -> tuple[np.ndarray, np.ndarray]:
    ts = grid.timescale
    lower = np.array([in_kappa_lower(ts, t) for t in grid.nodes])
    upper = np.array([in_kappa_upper(ts, t) for t in grid.nodes])
    return lower, upper


@dataclass(frozen=True)
class FormPair:
    """Nabla-form ``D(rho(t)) + N(t)`` and delta-form ``D(t) + N(sigma(t))``."""

    nabla_form: np.ndarray
    delta_form: np.ndarray
    nabla_ok: np.ndarray
    delta_ok: np.ndarray


def _forms(grid: Grid, aux: AuxPair) -> FormPair:
    ri, si = grid.rho_index, grid.sigma_index
    lower, upper = _kappa_masks(grid)
    nab = aux.delta_part[ri] + aux.nabla_part
    dlt = aux.delta_part + aux.nabla_part[si]
    nab_ok = aux.delta_ok[ri] & aux.nabla_ok & lower
    dlt_ok = aux.delta_ok & aux.nabla_ok[si] & upper
    return FormPair(nab, dlt, nab_ok, dlt_ok)


@dataclass(frozen=True)
class ELTrace:
    xi: GridFunction
    chi: GridFunction
    residual_nabla: GridFunction
    residual_delta: GridFunction
    valid_nabla: np.ndarray
    valid_delta: np.ndarray
    constancy_deviation_nabla: float
    constancy_deviation_delta: float
    mean_nabla: float
    mean_delta: float

    @property
    def relative_deviation_nabla(self) -> float:
        return _relative(self.residual_nabla.values, self.valid_nabla, self.constancy_deviation_nabla)

    @property
    def relative_deviation_delta(self) -> float:
        return _relative(self.residual_delta.values, self.valid_delta, self.constancy_deviation_delta)


def _relative(values: np.ndarray, mask: np.ndarray, dev: float) -> float:
    v = values[mask]
    scale = float(np.max(np.abs(v))) if v.size else 0.0
    return dev / scale if scale > 0 else 0.0


def _mean(values: np.ndarray, mask: np.ndarray) -> float:
    return float(values[mask].mean()) if mask.any() else float("nan")


def _traj(p: VariationalProblem, x) -> np.ndarray:
    vals = x.values if isinstance(x, GridFunction) else np.asarray(x, dtype=float)
    if vals.shape != (p.grid.size,):
        raise ValueError(f"trajectory has {vals.shape} values, grid has {p.grid.size} nodes")
    return vals


def compute_xi_chi(p: VariationalProblem, x) -> tuple[GridFunction, GridFunction]:
    ev = evaluate_functional(p.objective, p.grid, _traj(p, x))
    aux = _aux(p.objective, p.grid, ev)
    return GridFunction(p.grid, aux.delta_part), GridFunction(p.grid, aux.nabla_part)


def el_residuals(p: VariationalProblem, x) -> ELTrace:
    grid = p.grid
    ev = evaluate_functional(p.objective, grid, _traj(p, x))
    aux = _aux(p.objective, grid, ev)
    forms = _forms(grid, aux)
    return ELTrace(
        xi=GridFunction(grid, aux.delta_part),
        chi=GridFunction(grid, aux.nabla_part),
        residual_nabla=GridFunction(grid, forms.nabla_form),
        residual_delta=GridFunction(grid, forms.delta_form),
        valid_nabla=forms.nabla_ok,
        valid_delta=forms.delta_ok,
        constancy_deviation_nabla=deviation(forms.nabla_form, forms.nabla_ok),
        constancy_deviation_delta=deviation(forms.delta_form, forms.delta_ok),
        mean_nabla=_mean(forms.nabla_form, forms.nabla_ok),
        mean_delta=_mean(forms.delta_form, forms.delta_ok),
    )


def el_residuals_differ_on_irregular(p: VariationalProblem, x) -> float:
    """Max pointwise gap between the two Euler-Lagrange forms on T^kappa_kappa."""
    tr = el_residuals(p, x)
    both = tr.valid_nabla & tr.valid_delta
    if not both.any():
        return 0.0
    return float(np.max(np.abs(tr.residual_nabla.values - tr.residual_delta.values)[both]))


@dataclass(frozen=True)
class TransversalityReport:
    """Residuals are ``None`` when the endpoint is fixed or the hypothesis fails."""

    initial_residual: float | None
    terminal_residual: float | None
    hypothesis_initial_ok: bool
    hypothesis_terminal_ok: bool


def transversality(p: VariationalProblem, x) -> TransversalityReport:
    """Natural boundary conditions at free endpoints.

    ``sigma(a)`` and ``rho(b)`` are taken on the grid (next/previous node),
    which makes each residual equal, up to sign, to the derivative of the
    discretized functional with respect to that endpoint value.
    """
    grid = p.grid
    ts = grid.timescale
    ev = evaluate_functional(p.objective, grid, _traj(p, x))
    h = grid.steps
    init_ok = rho(ts, sigma(ts, ts.a)) == ts.a
    term_ok = sigma(ts, rho(ts, ts.b)) == ts.b

    initial = terminal = None
    if p.boundary.at_a is None and init_ok:
        initial = 0.0
        for hp, tr in zip(ev.outer_partials, ev.traces):
            if tr.kind == "delta":
                initial += hp * tr.fv[0]
            else:
                initial += hp * (tr.fv[1] - tr.fy[1] * h[0])
    if p.boundary.at_b is None and term_ok:
        terminal = 0.0
        for hp, tr in zip(ev.outer_partials, ev.traces):
            if tr.kind == "delta":
                terminal += hp * (tr.fv[-2] + tr.fy[-2] * h[-1])
            else:
                terminal += hp * tr.fv[-1]
    return TransversalityReport(
        None if initial is None else float(initial),
        None if terminal is None else float(terminal),
        bool(init_ok),
        bool(term_ok),
    )


def compute_u_w(c: IsoConstraint, grid: Grid, x) -> tuple[GridFunction, GridFunction]:
    vals = x.values if isinstance(x, GridFunction) else np.asarray(x, dtype=float)
    ev = evaluate_functional(c.functional, grid, vals)
    aux = _aux(c.functional, grid, ev)
    return GridFunction(grid, aux.delta_part), GridFunction(grid, aux.nabla_part)


@dataclass(frozen=True)
class IsoTrace:
    u: GridFunction
    w: GridFunction
    lam: float
    condition_deviations: tuple[float, float, float, float]
    normal: bool
    lambda_defined: bool
    constraint_deviation_nabla: float
    constraint_deviation_delta: float


def iso_conditions(p: VariationalProblem, x) -> IsoTrace:
    """Multiplier fit and deviations for the four isoperimetric conditions.

    ``lam`` minimizes the spread of ``A - lam * B`` over the nabla-form nodes,
    where ``A = xi(rho(t)) + chi(t)`` and ``B = u(rho(t)) + w(t)``.  When the
    constraint's own forms are constant the extremizer is abnormal and no
    multiplier is fitted (``lam`` is NaN).
    """
    if len(p.constraints) != 1:
        raise OptimalityError(f"expected exactly one isoperimetric constraint, got {len(p.constraints)}")
    c = p.constraints[0]
    grid = p.grid
    vals = _traj(p, x)
    obj = _forms(grid, _aux(p.objective, grid, evaluate_functional(p.objective, grid, vals)))
    caux = _aux(c.functional, grid, evaluate_functional(c.functional, grid, vals))
    con = _forms(grid, caux)

    m1 = obj.nabla_ok & con.nabla_ok
    m4 = obj.delta_ok & con.delta_ok
    mix = m1 & m4
    dev_bn = deviation(con.nabla_form, con.nabla_ok)
    dev_bd = deviation(con.delta_form, con.delta_ok)
    normal = not (dev_bn < ABNORMAL_TOL and dev_bd < ABNORMAL_TOL)

    lam = float("nan")
    defined = False
    if normal:
        for a, b, m in ((obj.nabla_form, con.nabla_form, m1), (obj.delta_form, con.delta_form, m4)):
            bm = b[m] - b[m].mean() if m.any() else b[m]
            if bm.size and np.dot(bm, bm) > 0 and deviation(b, m) >= ABNORMAL_TOL:
                am = a[m] - a[m].mean()
                lam = float(np.dot(am, bm) / np.dot(bm, bm))
                defined = True
                break

    if defined:
        devs = (
            deviation(obj.nabla_form - lam * con.nabla_form, m1),
            deviation(obj.delta_form - lam * con.nabla_form, mix),
            deviation(obj.nabla_form - lam * con.delta_form, mix),
            deviation(obj.delta_form - lam * con.delta_form, m4),
        )
    else:
        nan = float("nan")
        devs = (nan, nan, nan, nan)
    return IsoTrace(
        u=GridFunction(grid, caux.delta_part),
        w=GridFunction(grid, caux.nabla_part),
        lam=lam,
        condition_deviations=devs,
        normal=normal,
        lambda_defined=defined,
        constraint_deviation_nabla=dev_bn,
        constraint_deviation_delta=dev_bd,
    )
