"""Composition functionals of delta and nabla integrals, and their gradients.

The discretized functional is

    L(x) = H(F_1, ..., F_{k+n})

with ``F_i = sum_{j<N} f_i(t_j, x_{j+1}, (x_{j+1}-x_j)/h_j) h_j`` for delta
integrands and ``F_i = sum_{j>0} f_i(t_j, x_{j-1}, (x_j-x_{j-1})/h_{j-1}) h_{j-1}``
for nabla integrands.  Integrands are expressions in ``t, y, v``; the outer
function is an expression in ``F1..`` (objective) or ``G1..`` (constraint).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Literal, Sequence

import numpy as np

from .expr import Expression, ExprEvalError, parse
from .gridfn import GridFunction, backward_difference, forward_difference
from .timescale import Grid, TimeScale, build_grid

Kind = Literal["delta", "nabla"]
Sense = Literal["minimize", "maximize"]

INTEGRAND_VARS = frozenset({"t", "y", "v"})
DENOMINATOR_GUARD = 1e-9


class ProblemError(ValueError):
    """Malformed problem definition."""


@dataclass(frozen=True)
class Integrand:
    kind: Kind
    f: Expression

    def __post_init__(self):
        if self.kind not in ("delta", "nabla"):
            raise ProblemError(f"integrand kind must be 'delta' or 'nabla', got {self.kind!r}")
        extra = self.f.free_vars - INTEGRAND_VARS
        if extra:
            raise ProblemError(f"unknown variable {sorted(extra)[0]} in integrand {self.f.source!r}")

    @classmethod
    def of(cls, kind: Kind, text: str) -> "Integrand":
        return cls(kind, parse(text))


@dataclass(frozen=True)
class CompositionFunctional:
    outer: Expression
    integrands: tuple[Integrand, ...]
    prefix: str = "F"

    def __post_init__(self):
        object.__setattr__(self, "integrands", tuple(self.integrands))
        if not self.integrands:
            raise ProblemError("a composition functional needs at least one integrand")
        kinds = [ig.kind for ig in self.integrands]
        if kinds != sorted(kinds):  # "delta" < "nabla"
            raise ProblemError("delta integrands must precede nabla integrands")
        allowed = set(self.names)
        for name in sorted(self.outer.free_vars):
            if name not in allowed:
                raise ProblemError(f"unknown variable {name}")

    @property
    def names(self) -> list[str]:
        return [f"{self.prefix}{i + 1}" for i in range(len(self.integrands))]

    @property
    def k(self) -> int:
        return sum(ig.kind == "delta" for ig in self.integrands)

    @property
    def n(self) -> int:
        return len(self.integrands) - self.k


@dataclass(frozen=True)
class BoundarySpec:
    """Fixed endpoint values; ``None`` marks a free endpoint."""

    at_a: float | None = None
    at_b: float | None = None

    def __post_init__(self):
        for v in (self.at_a, self.at_b):
            if v is not None and not np.isfinite(v):
                raise ProblemError("fixed boundary values must be finite")


@dataclass(frozen=True)
class IsoConstraint:
    outer: Expression
    integrands: tuple[Integrand, ...]
    target: float

    @cached_property
    def functional(self) -> CompositionFunctional:
        return CompositionFunctional(self.outer, self.integrands, prefix="G")

    def __post_init__(self):
        object.__setattr__(self, "integrands", tuple(self.integrands))
        self.functional  # validates


@dataclass(frozen=True)
class VariationalProblem:
    timescale: TimeScale
    resolution: int
    objective: CompositionFunctional
    sense: Sense = "minimize"
    boundary: BoundarySpec = BoundarySpec()
    constraints: tuple[IsoConstraint, ...] = ()

    def __post_init__(self):
        if self.sense not in ("minimize", "maximize"):
            raise ProblemError(f"sense must be minimize or maximize, got {self.sense!r}")
        object.__setattr__(self, "constraints", tuple(self.constraints))

    @cached_property
    def grid(self) -> Grid:
        return build_grid(self.timescale, self.resolution)

    @property
    def sign(self) -> float:
        return 1.0 if self.sense == "minimize" else -1.0

    def free_mask(self) -> np.ndarray:
        mask = np.ones(self.grid.size, dtype=bool)
        if self.boundary.at_a is not None:
            mask[0] = False
        if self.boundary.at_b is not None:
            mask[-1] = False
        return mask

    def linear_initializer(self) -> GridFunction:
        """Straight line between the fixed ends; flat when one or both are free."""
        g = self.grid
        xa, xb = self.boundary.at_a, self.boundary.at_b
        if xa is not None and xb is not None:
            vals = xa + (xb - xa) * (g.nodes - g.nodes[0]) / (g.nodes[-1] - g.nodes[0])
        else:
            vals = np.full(g.size, xa if xa is not None else (xb if xb is not None else 0.0))
        return GridFunction(g, vals)

    def is_admissible(self, x: GridFunction, tol: float = 1e-12) -> bool:
        xa, xb = self.boundary.at_a, self.boundary.at_b
        return (xa is None or abs(x.values[0] - xa) <= tol) and (xb is None or abs(x.values[-1] - xb) <= tol)

    def with_resolution(self, resolution: int) -> "VariationalProblem":
        return VariationalProblem(
            self.timescale, resolution, self.objective, self.sense, self.boundary, self.constraints
        )


# -- evaluation -------------------------------------------------------------------


@dataclass(frozen=True)
class IntegrandTrace:
    """Integrand value and partials on every node.

    Delta integrands are genuine on nodes ``0..N-1`` and nabla integrands on
    ``1..N``; the remaining node holds a copy of its neighbour.
    """

    kind: Kind
    f: np.ndarray
    fy: np.ndarray
    fv: np.ndarray


@dataclass(frozen=True)
class FunctionalEvaluation:
    inner: np.ndarray
    value: float
    outer_partials: np.ndarray
    traces: tuple[IntegrandTrace, ...]


def _locate_failure(expr: Expression, bindings: dict, t: np.ndarray, err: ExprEvalError) -> ExprEvalError:
    for j in range(len(t)):
        point = {name: (val[j] if isinstance(val, np.ndarray) else val) for name, val in bindings.items()}
        try:
            expr.eval(point)
        except ExprEvalError as inner:
            return ExprEvalError(f"{inner} in integrand {expr.source!r} at t={float(t[j])!r}")
    return ExprEvalError(f"{err} in integrand {expr.source!r}")


def _trace(ig: Integrand, grid: Grid, x: np.ndarray) -> IntegrandTrace:
    t = np.asarray(grid.nodes, dtype=float)
    if ig.kind == "delta":
        sl, tt, y = slice(0, -1), t[:-1], x[1:]
        v = forward_difference(grid, x)[:-1]
    else:
        sl, tt, y = slice(1, None), t[1:], x[:-1]
        v = backward_difference(grid, x)[1:]
    bindings = {"t": tt, "y": y, "v": v}
    try:
        out = ig.f.eval_with_partials(bindings, wrt=("y", "v"))
    except ExprEvalError as err:
        raise _locate_failure(ig.f, bindings, tt, err) from None
    vals = [np.broadcast_to(np.asarray(a, dtype=float), tt.shape) for a in (out.value, out.d("y"), out.d("v"))]
    for a in vals:
        if not np.all(np.isfinite(a)):
            bad = tt[~np.isfinite(a)][0]
            raise ExprEvalError(f"non-finite value in integrand {ig.f.source!r} at t={float(bad)!r}")
    full = []
    for a in vals:
        arr = np.empty(grid.size)
        arr[sl] = a
        if ig.kind == "delta":
            arr[-1] = a[-1]
        else:
            arr[0] = a[0]
        full.append(arr)
    return IntegrandTrace(ig.kind, *full)


def evaluate_functional(fn: CompositionFunctional, grid: Grid, x: np.ndarray) -> FunctionalEvaluation:
    x = np.asarray(x, dtype=float)
    h = grid.steps
    traces = tuple(_trace(ig, grid, x) for ig in fn.integrands)
    inner = np.array(
        [np.dot(tr.f[:-1], h) if tr.kind == "delta" else np.dot(tr.f[1:], h) for tr in traces]
    )
    bindings = dict(zip(fn.names, inner))
    try:
        out = fn.outer.eval_with_partials(bindings, min_denominator=DENOMINATOR_GUARD)
    except ExprEvalError as err:
        raise ExprEvalError(f"{err} in outer function {fn.outer.source!r}") from None
    value = float(out.value)
    partials = np.array([float(out.partials[name]) for name in fn.names])
    if not (np.isfinite(value) and np.all(np.isfinite(partials))):
        raise ExprEvalError(f"non-finite value of outer function {fn.outer.source!r}")
    return FunctionalEvaluation(inner, value, partials, traces)


def integrand_gradients(grid: Grid, ev: FunctionalEvaluation) -> np.ndarray:
    """Row i holds d F_i / d x_j on every node."""
    h = grid.steps
    out = np.zeros((len(ev.traces), grid.size))
    for i, tr in enumerate(ev.traces):
        g = out[i]
        if tr.kind == "delta":
            fy, fv = tr.fy[:-1], tr.fv[:-1]
            g[1:] += fy * h + fv
            g[:-1] -= fv
        else:
            fy, fv = tr.fy[1:], tr.fv[1:]
            g[:-1] += fy * h - fv
            g[1:] += fv
    return out


def functional_gradient(grid: Grid, ev: FunctionalEvaluation) -> np.ndarray:
    """d value / d x_j on every node, by the chain rule through the stencils."""
    return ev.outer_partials @ integrand_gradients(grid, ev)


def _outer_hessian(fn: CompositionFunctional, inner: np.ndarray, rel: float = 1e-6) -> np.ndarray:
    m = len(inner)
    out = np.empty((m, m))
    for k in range(m):
        step = rel * max(1.0, abs(inner[k]))
        cols = []
        for sgn in (1.0, -1.0):
            point = inner.copy()
            point[k] += sgn * step
            dv = fn.outer.eval_with_partials(dict(zip(fn.names, point)), min_denominator=DENOMINATOR_GUARD)
            cols.append(np.array([float(dv.partials[name]) for name in fn.names]))
        out[:, k] = (cols[0] - cols[1]) / (2 * step)
    return 0.5 * (out + out.T)


def functional_hessian(fn: CompositionFunctional, grid: Grid, x: np.ndarray, rel: float = 1e-5) -> np.ndarray:
    """Second derivatives of the discretized functional by finite differences.

    Each inner integral couples only neighbouring nodes, so its Hessian is
    tridiagonal and three perturbations (every third node at once) recover it.
    The outer function adds ``J^T H'' J`` with ``J`` the inner gradients.
    """
    x = np.asarray(x, dtype=float)
    n = grid.size
    ev = evaluate_functional(fn, grid, x)
    jac = integrand_gradients(grid, ev)
    step = rel * max(1.0, float(np.max(np.abs(x))))
    idx = np.arange(n)
    hess = np.zeros((n, n))
    for color in range(3):
        cols = idx[idx % 3 == color]
        e = np.zeros(n)
        e[cols] = step
        jp = integrand_gradients(grid, evaluate_functional(fn, grid, x + e))
        jm = integrand_gradients(grid, evaluate_functional(fn, grid, x - e))
        dw = ev.outer_partials @ ((jp - jm) / (2 * step))
        for off in (-1, 0, 1):
            r = cols + off
            ok = (r >= 0) & (r < n)
            hess[r[ok], cols[ok]] = dw[r[ok]]
    hess += jac.T @ _outer_hessian(fn, ev.inner) @ jac
    return 0.5 * (hess + hess.T)


def _values(p: VariationalProblem, x: GridFunction | np.ndarray) -> np.ndarray:
    vals = x.values if isinstance(x, GridFunction) else np.asarray(x, dtype=float)
    if vals.shape != (p.grid.size,):
        raise ValueError(f"trajectory has {vals.shape} values, grid has {p.grid.size} nodes")
    return vals


def inner_integrals(p: VariationalProblem, x: GridFunction | np.ndarray) -> list[float]:
    return [float(v) for v in evaluate_functional(p.objective, p.grid, _values(p, x)).inner]


def objective_value(p: VariationalProblem, x: GridFunction | np.ndarray) -> float:
    return evaluate_functional(p.objective, p.grid, _values(p, x)).value


def objective_gradient(p: VariationalProblem, x: GridFunction | np.ndarray) -> GridFunction:
    """Exact gradient of the discretized L; zero on fixed boundary nodes."""
    ev = evaluate_functional(p.objective, p.grid, _values(p, x))
    grad = functional_gradient(p.grid, ev)
    grad[~p.free_mask()] = 0.0
    return GridFunction(p.grid, grad)


def constraint_value(c: IsoConstraint, grid: Grid, x: GridFunction | np.ndarray) -> float:
    vals = x.values if isinstance(x, GridFunction) else np.asarray(x, dtype=float)
    return evaluate_functional(c.functional, grid, vals).value


def constraint_violation(c: IsoConstraint, grid: Grid, x: GridFunction | np.ndarray) -> float:
    return constraint_value(c, grid, x) - c.target


def norm_1_inf(x: GridFunction) -> float:
    """sup|x^sigma| + sup|x^Delta| + sup|x^rho| + sup|x^nabla| over genuine nodes."""
    v = x.values
    d = np.diff(v) / x.grid.steps
    return float(np.max(np.abs(v[1:])) + np.max(np.abs(d)) + np.max(np.abs(v[:-1])) + np.max(np.abs(d)))


def quotient_problem(f1: Integrand, f2: Integrand) -> CompositionFunctional:
    """``F1/F2`` with a delta numerator and a nabla denominator."""
    if f1.kind != "delta" or f2.kind != "nabla":
        raise ProblemError("quotient_problem takes a delta numerator and a nabla denominator")
    return CompositionFunctional(parse("F1/F2"), (f1, f2))


def functional(outer: str, delta: Sequence[str] = (), nabla: Sequence[str] = (), prefix: str = "F") -> CompositionFunctional:
    """Shorthand constructor from expression strings."""
    igs = [Integrand.of("delta", s) for s in delta] + [Integrand.of("nabla", s) for s in nabla]
    return CompositionFunctional(parse(outer), tuple(igs), prefix)
