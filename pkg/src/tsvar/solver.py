"""Direct transcription: optimize the discretized functional over node values.

On small grids the solver takes Newton steps while the Hessian (finite
differences of the exact gradient, exploiting its banded-plus-low-rank
structure) is positive definite.  Otherwise descent directions come from a
limited-memory BFGS two-loop recursion, falling back to the negative gradient
whenever that is not a descent direction.  Every step is accepted by Armijo
backtracking, so the objective decreases monotonically.  Isoperimetric
constraints are handled by a quadratic penalty with an increasing weight; the
multiplier is then recovered independently from the integral-form optimality
conditions.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .expr import Expression, ExprEvalError
from .gridfn import GridFunction
from .optimality import (
    ELTrace,
    IsoTrace,
    TransversalityReport,
    el_residuals,
    iso_conditions,
    transversality,
)
from .varproblem import (
    VariationalProblem,
    evaluate_functional,
    functional_gradient,
    functional_hessian,
)

log = logging.getLogger(__name__)

# consecutive accepted steps without a strict objective decrease before giving up
FLAT_LIMIT = 50
# largest number of free nodes for which a finite-difference Hessian is affordable
NEWTON_MAX_SIZE = 1000
NEWTON_MAX_STEPS = 200


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class SolveOptions:
    max_iterations: int = 20000
    gradient_tolerance: float = 1e-9
    initial_step: float = 1.0
    backtrack: float = 0.5
    sufficient_decrease: float = 1e-4
    memory: int = 10
    penalty_initial: float = 10.0
    penalty_growth: float = 10.0
    penalty_rounds: int = 12
    constraint_tolerance: float = 1e-8
    initializer: GridFunction | None = None
    seed: int = 0
    restarts: int = 0
    restart_scale: float = 0.1

    def __post_init__(self):
        if self.gradient_tolerance <= 0 or self.constraint_tolerance <= 0:
            raise ValueError("tolerances must be positive")
        if self.penalty_growth <= 1:
            raise ValueError("penalty growth factor must exceed 1")
        if not 0 < self.backtrack < 1:
            raise ValueError("backtracking factor must lie in (0, 1)")


@dataclass
class SolveResult:
    x: GridFunction
    objective: float
    gradient_norm: float
    constraint_violation: float
    lambda_estimate: float
    iterations: int
    converged: bool
    status: str
    el: ELTrace
    transversality: TransversalityReport
    iso: IsoTrace | None = None
    penalty_lambda: float = float("nan")
    penalty_weight: float = 0.0
    outer_rounds: int = 0
    history: list[float] = field(default_factory=list, repr=False)


@dataclass
class _Descent:
    z: np.ndarray
    f: float
    g: np.ndarray
    iterations: int
    status: str  # "converged" | "stalled" | "max_iterations" | "indefinite"
    history: list[float]


def _descend(
    fun: Callable[[np.ndarray], tuple[float, np.ndarray]],
    z0: np.ndarray,
    opts: SolveOptions,
    max_iterations: int,
) -> _Descent:
    f, g = fun(z0)
    if not np.isfinite(f):
        raise SolverError("objective is undefined at the initial trajectory")
    z = z0.copy()
    history = [f]
    mem: deque[tuple[np.ndarray, np.ndarray, float]] = deque(maxlen=opts.memory)
    c1, beta = opts.sufficient_decrease, opts.backtrack
    flat = 0

    for it in range(max_iterations):
        if z.size == 0 or np.max(np.abs(g)) <= opts.gradient_tolerance:
            return _Descent(z, f, g, it, "converged", history)

        accepted = False
        for use_memory in (True, False):
            if use_memory and not mem:
                continue
            if use_memory:
                d = -_two_loop(g, mem)
                step = 1.0
            else:
                d = -g
                step = opts.initial_step / max(float(np.max(np.abs(g))), 1e-300)
            slope = float(g @ d)
            if slope >= 0:
                continue
            gmax = float(np.max(np.abs(g)))
            for _ in range(80):
                z_new = z + step * d
                f_new, g_new = fun(z_new)
                if np.isfinite(f_new) and f_new <= f + c1 * step * slope:
                    # at the rounding floor f cannot confirm progress; require the gradient to shrink
                    if f_new < f or float(np.max(np.abs(g_new))) < gmax:
                        accepted = True
                        break
                step *= beta
            if accepted:
                break
            mem.clear()

        if not accepted:
            return _Descent(z, f, g, it, "stalled", history)

        s, y = z_new - z, g_new - g
        sy = float(s @ y)
        if sy > 1e-12 * float(np.linalg.norm(s) * np.linalg.norm(y)):
            mem.append((s, y, 1.0 / sy))
        flat = flat + 1 if f_new >= f else 0
        z, f, g = z_new, f_new, g_new
        history.append(f)
        if flat >= FLAT_LIMIT:
            return _Descent(z, f, g, it + 1, "stalled", history)

    status = "converged" if np.max(np.abs(g), initial=0.0) <= opts.gradient_tolerance else "max_iterations"
    return _Descent(z, f, g, max_iterations, status, history)


def _newton(obj: "_Objective", z0: np.ndarray, opts: SolveOptions, max_iterations: int) -> _Descent:
    """Newton steps under the same monotone line search.

    Stops with status "indefinite" where the Hessian is not positive
    definite, leaving those regions to the first-order method, so saddle
    points of non-convex functionals are not targeted.
    """
    f, g = obj(z0)
    if not np.isfinite(f):
        raise SolverError("objective is undefined at the initial trajectory")
    z = z0.copy()
    history = [f]
    c1, beta = opts.sufficient_decrease, opts.backtrack
    for it in range(max_iterations):
        gmax = float(np.max(np.abs(g), initial=0.0))
        if gmax <= opts.gradient_tolerance:
            return _Descent(z, f, g, it, "converged", history)
        hess = obj.hessian(z)
        if hess is None or not np.all(np.isfinite(hess)):
            return _Descent(z, f, g, it, "stalled", history)
        w, v = np.linalg.eigh(hess)
        if w[0] <= 1e-12 * max(float(np.max(np.abs(w))), 1e-300):
            return _Descent(z, f, g, it, "indefinite", history)
        d = -(v @ ((v.T @ g) / w))
        slope = float(g @ d)
        step, accepted = 1.0, False
        for _ in range(60):
            z_new = z + step * d
            f_new, g_new = obj(z_new)
            if np.isfinite(f_new) and f_new <= f + c1 * step * slope:
                if f_new < f or float(np.max(np.abs(g_new))) < gmax:
                    accepted = True
                    break
            step *= beta
        if not accepted:
            return _Descent(z, f, g, it, "stalled", history)
        z, f, g = z_new, f_new, g_new
        history.append(f)
    status = "converged" if np.max(np.abs(g), initial=0.0) <= opts.gradient_tolerance else "max_iterations"
    return _Descent(z, f, g, max_iterations, status, history)


def _minimize(obj: "_Objective", z0: np.ndarray, opts: SolveOptions, max_iterations: int) -> _Descent:
    """Newton where it is safe on small grids, limited-memory descent elsewhere."""
    if not 0 < z0.size <= NEWTON_MAX_SIZE:
        return _descend(obj, z0, opts, max_iterations)
    runs = [_newton(obj, z0, opts, min(NEWTON_MAX_STEPS, max_iterations))]
    if runs[-1].status != "converged":
        runs.append(_descend(obj, runs[-1].z, opts, max(1, max_iterations - runs[-1].iterations)))
        if runs[-1].status != "converged":
            runs.append(_newton(obj, runs[-1].z, opts, NEWTON_MAX_STEPS))
    last = runs[-1]
    history = runs[0].history + [f for r in runs[1:] for f in r.history[1:]]
    return _Descent(last.z, last.f, last.g, sum(r.iterations for r in runs), last.status, history)


def _two_loop(g: np.ndarray, mem) -> np.ndarray:
    q = g.copy()
    alphas = []
    for s, y, r in reversed(mem):
        a = r * float(s @ q)
        alphas.append(a)
        q -= a * y
    s, y, _ = mem[-1]
    q *= float(s @ y) / float(y @ y)
    for (s, y, r), a in zip(mem, reversed(alphas)):
        b = r * float(y @ q)
        q += (a - b) * s
    return q


class _Objective:
    """Signed objective (plus optional penalty) as a function of free values."""

    def __init__(self, p: VariationalProblem, base: np.ndarray, weight: float = 0.0):
        self.p = p
        self.base = base.copy()
        self.free = p.free_mask()
        self.weight = weight

    def full(self, z: np.ndarray) -> np.ndarray:
        x = self.base.copy()
        x[self.free] = z
        return x

    def __call__(self, z: np.ndarray) -> tuple[float, np.ndarray]:
        x = self.full(z)
        grid = self.p.grid
        try:
            ev = evaluate_functional(self.p.objective, grid, x)
            f = self.p.sign * ev.value
            g = self.p.sign * functional_gradient(grid, ev)
            if self.weight:
                c = self.p.constraints[0]
                cev = evaluate_functional(c.functional, grid, x)
                viol = cev.value - c.target
                f += self.weight * viol * viol
                g = g + 2.0 * self.weight * viol * functional_gradient(grid, cev)
        except ExprEvalError:
            return float("inf"), np.zeros_like(z)
        return float(f), g[self.free]

    def hessian(self, z: np.ndarray) -> np.ndarray | None:
        x = self.full(z)
        grid = self.p.grid
        try:
            hess = self.p.sign * functional_hessian(self.p.objective, grid, x)
            if self.weight:
                c = self.p.constraints[0]
                cev = evaluate_functional(c.functional, grid, x)
                gk = functional_gradient(grid, cev)
                viol = cev.value - c.target
                hess = hess + 2.0 * self.weight * (np.outer(gk, gk) + viol * functional_hessian(c.functional, grid, x))
        except ExprEvalError:
            return None
        return hess[np.ix_(self.free, self.free)]


def _start(p: VariationalProblem, opts: SolveOptions) -> np.ndarray:
    x0 = p.linear_initializer().values.copy()
    if opts.initializer is not None:
        if opts.initializer.grid.size != p.grid.size:
            raise SolverError("initializer lives on a different grid")
        x0 = opts.initializer.values.copy()
        if p.boundary.at_a is not None:
            x0[0] = p.boundary.at_a
        if p.boundary.at_b is not None:
            x0[-1] = p.boundary.at_b
    return x0


def _starts(p: VariationalProblem, opts: SolveOptions) -> list[np.ndarray]:
    x0 = _start(p, opts)
    out = [x0]
    rng = np.random.default_rng(opts.seed)
    free = p.free_mask()
    for _ in range(opts.restarts):
        x = x0.copy()
        x[free] += opts.restart_scale * rng.standard_normal(int(free.sum()))
        out.append(x)
    return out


def solve_direct(p: VariationalProblem, opts: SolveOptions = SolveOptions()) -> SolveResult:
    """Minimize (or maximize) the discretized functional with pinned fixed ends."""
    if p.constraints:
        return solve_isoperimetric(p, opts)
    best: _Descent | None = None
    best_obj = None
    for i, x0 in enumerate(_starts(p, opts)):
        obj = _Objective(p, x0)
        try:
            run = _minimize(obj, x0[obj.free], opts, opts.max_iterations)
        except SolverError:
            if i == 0:
                raise
            continue
        if best is None or _better(run, best):
            best, best_obj = run, obj
    assert best is not None and best_obj is not None
    x = GridFunction(p.grid, best_obj.full(best.z))
    gnorm = float(np.max(np.abs(best.g), initial=0.0))
    converged = gnorm <= opts.gradient_tolerance
    log.info("solve_direct: %s after %d iterations, |g|=%.3e", best.status, best.iterations, gnorm)
    return SolveResult(
        x=x,
        objective=p.sign * best.f,
        gradient_norm=gnorm,
        constraint_violation=0.0,
        lambda_estimate=float("nan"),
        iterations=best.iterations,
        converged=converged,
        status=best.status,
        el=el_residuals(p, x),
        transversality=transversality(p, x),
        history=[p.sign * v for v in best.history],
    )


def _better(run: _Descent, best: _Descent) -> bool:
    ok_run, ok_best = run.status == "converged", best.status == "converged"
    if ok_run != ok_best:
        return ok_run
    return run.f < best.f


def _projected_gradient(p: VariationalProblem, x: np.ndarray) -> tuple[float, float]:
    """Max-norm of the objective gradient tangent to the constraint, and the
    multiplier that best explains the normal part."""
    grid, free = p.grid, p.free_mask()
    c = p.constraints[0]
    gl = functional_gradient(grid, evaluate_functional(p.objective, grid, x))[free]
    gk = functional_gradient(grid, evaluate_functional(c.functional, grid, x))[free]
    kk = float(gk @ gk)
    lam = float(gl @ gk) / kk if kk > 0 else float("nan")
    resid = gl - (lam if kk > 0 else 0.0) * gk
    return float(np.max(np.abs(resid), initial=0.0)), lam


def solve_isoperimetric(p: VariationalProblem, opts: SolveOptions = SolveOptions()) -> SolveResult:
    """Quadratic-penalty loop around the descent solver, for one constraint."""
    if len(p.constraints) != 1:
        raise SolverError(f"exactly one isoperimetric constraint is supported, got {len(p.constraints)}")
    c = p.constraints[0]
    x = _start(p, opts)
    free = p.free_mask()
    weight = opts.penalty_initial
    history: list[float] = []
    iterations = 0
    prev_viol = None
    worse = 0
    status = "max_rounds"
    rounds = 0
    viol = float("nan")
    for rounds in range(1, opts.penalty_rounds + 1):
        obj = _Objective(p, x, weight)
        run = _minimize(obj, x[free], opts, max(1, opts.max_iterations - iterations))
        iterations += run.iterations
        history.extend(run.history)
        x = obj.full(run.z)
        viol = evaluate_functional(c.functional, p.grid, x).value - c.target
        log.info(
            "penalty round %d: weight=%.1e violation=%.3e (%s, %d iterations, tangent |g|=%.3e)",
            rounds, weight, viol, run.status, run.iterations, _projected_gradient(p, x)[0],
        )
        if abs(viol) <= opts.constraint_tolerance and run.status != "max_iterations":
            status = "converged"
            break
        if iterations >= opts.max_iterations:
            status = "max_iterations"
            break
        if prev_viol is not None and abs(viol) >= abs(prev_viol):
            worse += 1
            if worse >= 2:
                status = "penalty_diverged"
                break
        else:
            worse = 0
        prev_viol = viol
        weight *= opts.penalty_growth

    gnorm, _ = _projected_gradient(p, x)
    converged = status == "converged" and gnorm <= opts.gradient_tolerance
    if status == "converged" and not converged:
        status = "not_stationary"
    xf = GridFunction(p.grid, x)
    iso = iso_conditions(p, xf)
    return SolveResult(
        x=xf,
        objective=evaluate_functional(p.objective, p.grid, x).value,
        gradient_norm=gnorm,
        constraint_violation=float(viol),
        lambda_estimate=iso.lam,
        iterations=iterations,
        converged=converged,
        status=status,
        el=el_residuals(p, xf),
        transversality=transversality(p, xf),
        iso=iso,
        penalty_lambda=-2.0 * weight * viol * p.sign,
        penalty_weight=weight,
        outer_rounds=rounds,
        history=history,
    )


def find_scalar_roots(e: Expression, lo: float, hi: float, n_brackets: int = 1000, xtol: float = 1e-12) -> list[float]:
    """Real roots of a one-variable expression on ``[lo, hi]``.

    Sign changes are bracketed on ``n_brackets`` uniform cells and refined by
    bisection.  Roots of even multiplicity (no sign change) are missed.
    """
    if not lo < hi:
        raise ValueError("need lo < hi")
    names = sorted(e.free_vars)
    if len(names) > 1:
        raise ValueError(f"expected an expression in one variable, got {names}")
    name = names[0] if names else "x"

    def f(q: float) -> float:
        return float(e.eval({name: q}))

    xs = np.linspace(lo, hi, n_brackets + 1)
    fs = [f(q) for q in xs]
    roots: list[float] = []
    for i in range(n_brackets):
        a, b, fa, fb = xs[i], xs[i + 1], fs[i], fs[i + 1]
        if fa == 0.0:
            roots.append(float(a))
            continue
        if i == n_brackets - 1 and fb == 0.0:
            roots.append(float(b))
        if fa * fb >= 0:
            continue
        while b - a > xtol:
            m = 0.5 * (a + b)
            if m <= a or m >= b:
                break
            fm = f(m)
            if fm == 0.0:
                a = b = m
                break
            if (fm < 0) == (fa < 0):
                a, fa = m, fm
            else:
                b, fb = m, fm
        roots.append(float(a if abs(f(a)) <= abs(f(b)) else b))
    out: list[float] = []
    for r in sorted(roots):
        if not out or r - out[-1] > 10 * xtol:
            out.append(r)
    return out
