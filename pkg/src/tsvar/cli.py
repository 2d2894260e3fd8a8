"""Command-line front end.

Problem files are sectioned ``key = value`` text::

    # comments start with '#'
    [timescale]
    segments = {0},{0.5},{1}
    resolution = 100            # cells per unit length on intervals

    [objective]
    outer = F1/F2
    delta = t*v                 # F1; repeat the key for more integrands
    nabla = v^2                 # F2; delta integrands come first
    sense = minimize

    [boundary]
    a = fixed 0
    b = free

    [constraint]                # optional, at most one
    outer = G1
    nabla = t*v
    target = 1

    [solver]                    # optional overrides of SolveOptions
    max_iterations = 5000

    [trajectory]                # optional: node values or an expression in t
    values = 0, 1 + sqrt(2)/2, 1

Values may be wrapped in double quotes.  Exit codes: 0 ok, 1 identity check
failed (verify), 2 input error, 3 domain error, 4 solver did not converge.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import IO, Any, Sequence

import numpy as np

from .expr import ExprEvalError, ExprSyntaxError, parse
from .gridfn import (
    GridFunction,
    delta_derivative,
    delta_deriv_from_nabla,
    delta_integral,
    integral_interchange_delta_to_nabla,
    integral_interchange_nabla_to_delta,
    nabla_derivative,
    nabla_deriv_from_delta,
    nabla_integral,
    write_csv,
)
from .optimality import (
    compute_u_w,
    default_tolerance,
    el_residuals,
    el_residuals_differ_on_irregular,
    iso_conditions,
    transversality,
)
from .solver import SolveOptions, SolveResult, SolverError, solve_direct
from .timescale import TimeScaleError, is_regular, parse_timescale
from .varproblem import (
    BoundarySpec,
    CompositionFunctional,
    Integrand,
    IsoConstraint,
    ProblemError,
    VariationalProblem,
    constraint_value,
    evaluate_functional,
)

SCHEMA_VERSION = 1
DEFAULT_RESOLUTION = 100
IDENTITY_TOL = 1e-9

EXIT_OK, EXIT_IDENTITY, EXIT_INPUT, EXIT_DOMAIN, EXIT_NOT_CONVERGED = 0, 1, 2, 3, 4


class ProblemFileError(ValueError):
    def __init__(self, message: str, line: int, column: int = 1):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


# -- problem files ------------------------------------------------------------------


@dataclass
class _Entry:
    key: str
    value: str
    line: int
    column: int  # 1-based column of the first character of the value


_SECTION_KEYS = {
    "timescale": {"segments", "resolution"},
    "objective": {"outer", "delta", "nabla", "sense"},
    "boundary": {"a", "b"},
    "constraint": {"outer", "delta", "nabla", "target"},
    "solver": {
        "max_iterations",
        "gradient_tolerance",
        "initial_step",
        "backtrack",
        "sufficient_decrease",
        "memory",
        "penalty_initial",
        "penalty_growth",
        "penalty_rounds",
        "constraint_tolerance",
        "seed",
        "restarts",
        "restart_scale",
        "initializer",
    },
    "trajectory": {"values", "expr"},
}
_REPEATABLE = {"delta", "nabla"}
_REQUIRED = ("timescale", "objective", "boundary")


def _strip_comment(line: str) -> str:
    in_quote = False
    for i, ch in enumerate(line):
        if ch == '"':
            in_quote = not in_quote
        elif ch == "#" and not in_quote:
            return line[:i]
    return line


def _read_sections(text: str) -> tuple[dict[str, list[_Entry]], dict[str, int]]:
    sections: dict[str, list[_Entry]] = {}
    header_lines: dict[str, int] = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).rstrip()
        if not line.strip():
            continue
        indent = len(line) - len(line.lstrip())
        body = line.strip()
        if body.startswith("["):
            if not body.endswith("]"):
                raise ProblemFileError("unterminated section header", lineno, indent + 1)
            name = body[1:-1].strip()
            if name not in _SECTION_KEYS:
                raise ProblemFileError(f"unknown section [{name}]", lineno, indent + 2)
            if name in sections:
                raise ProblemFileError(f"duplicate section [{name}]", lineno, indent + 2)
            sections[name] = []
            header_lines[name] = lineno
            current = name
            continue
        if "=" not in body:
            raise ProblemFileError("expected 'key = value'", lineno, indent + 1)
        if current is None:
            raise ProblemFileError("key outside of any section", lineno, indent + 1)
        key_part, value_part = line.split("=", 1)
        key = key_part.strip()
        if key not in _SECTION_KEYS[current]:
            raise ProblemFileError(f"unknown key {key!r} in [{current}]", lineno, indent + 1)
        if key not in _REPEATABLE and any(e.key == key for e in sections[current]):
            raise ProblemFileError(f"duplicate key {key!r} in [{current}]", lineno, indent + 1)
        lead = len(value_part) - len(value_part.lstrip())
        column = len(key_part) + 2 + lead
        value = value_part.strip()
        if len(value) >= 2 and value[0] == value[-1] == '"':
            value = value[1:-1]
            column += 1
        if not value:
            raise ProblemFileError(f"empty value for {key!r}", lineno, column)
        sections[current].append(_Entry(key, value, lineno, column))
    for name in _REQUIRED:
        if name not in sections:
            last = len(text.splitlines()) or 1
            raise ProblemFileError(f"missing section [{name}]", last)
    return sections, header_lines


def _get(entries: list[_Entry], key: str) -> _Entry | None:
    for e in entries:
        if e.key == key:
            return e
    return None


def _need(entries: list[_Entry], key: str, section: str, header: int) -> _Entry:
    e = _get(entries, key)
    if e is None:
        raise ProblemFileError(f"missing key {key!r} in [{section}]", header)
    return e


def _expr(e: _Entry):
    try:
        return parse(e.value)
    except ExprSyntaxError as err:
        raise ProblemFileError(str(err), e.line, e.column + err.offset) from None


def _constant(e: _Entry, text: str | None = None, column: int | None = None) -> float:
    text = e.value if text is None else text
    column = e.column if column is None else column
    try:
        ex = parse(text)
    except ExprSyntaxError as err:
        raise ProblemFileError(str(err), e.line, column + err.offset) from None
    if ex.free_vars:
        raise ProblemFileError(f"expected a number, found variable {sorted(ex.free_vars)[0]}", e.line, column)
    try:
        v = float(ex.eval({}))
    except ExprEvalError as err:
        raise ProblemFileError(str(err), e.line, column) from None
    if not math.isfinite(v):
        raise ProblemFileError("value is not finite", e.line, column)
    return v


def _integer(e: _Entry) -> int:
    try:
        return int(e.value)
    except ValueError:
        raise ProblemFileError(f"expected an integer for {e.key!r}, got {e.value!r}", e.line, e.column) from None


def _integrands(entries: list[_Entry], section: str, header: int) -> tuple[Integrand, ...]:
    out = []
    seen_nabla = False
    for e in entries:
        if e.key not in ("delta", "nabla"):
            continue
        if e.key == "nabla":
            seen_nabla = True
        elif seen_nabla:
            raise ProblemFileError("delta integrands must precede nabla integrands", e.line, 1)
        try:
            out.append(Integrand(e.key, _expr(e)))
        except ProblemError as err:
            raise ProblemFileError(str(err), e.line, e.column) from None
    if not out:
        raise ProblemFileError(f"[{section}] needs at least one delta or nabla integrand", header)
    return tuple(out)


def _composition(entries: list[_Entry], section: str, header: int, prefix: str) -> CompositionFunctional:
    outer_e = _need(entries, "outer", section, header)
    outer = _expr(outer_e)
    igs = _integrands(entries, section, header)
    try:
        return CompositionFunctional(outer, igs, prefix)
    except ProblemError as err:
        raise ProblemFileError(str(err), outer_e.line, outer_e.column) from None


def _endpoint(e: _Entry) -> float | None:
    words = e.value.split(None, 1)
    if words[0] == "free" and len(words) == 1:
        return None
    if words[0] == "fixed" and len(words) == 2:
        offset = e.value.index(words[1], len("fixed"))
        return _constant(e, words[1], e.column + offset)
    raise ProblemFileError(f"expected 'fixed <value>' or 'free', got {e.value!r}", e.line, e.column)


_FLOAT_OPTIONS = {
    "gradient_tolerance",
    "initial_step",
    "backtrack",
    "sufficient_decrease",
    "penalty_initial",
    "penalty_growth",
    "constraint_tolerance",
    "restart_scale",
}


@dataclass
class ProblemFile:
    """A parsed problem file: the problem, solver options and an optional trajectory."""

    problem: VariationalProblem
    options: SolveOptions
    trajectory: GridFunction | None = None
    trajectory_source: str | None = None
    use_trajectory_initializer: bool = False
    path: str = "<string>"

    def with_resolution(self, resolution: int) -> "ProblemFile":
        p = self.problem.with_resolution(resolution)
        traj = None
        if self.trajectory_source is not None:
            traj = _trajectory_from_source(p, self.trajectory_source)
        return replace(self, problem=p, trajectory=traj)


def _trajectory_from_source(p: VariationalProblem, source: str) -> GridFunction:
    kind, text = source.split(":", 1)
    grid = p.grid
    if kind == "expr":
        vals = parse(text).eval({"t": grid.nodes})
        return GridFunction(grid, np.broadcast_to(np.asarray(vals, dtype=float), grid.nodes.shape))
    return GridFunction(grid, np.array([float(v) for v in text.split(",")]))


def parse_problem_text(text: str, path: str = "<string>") -> ProblemFile:
    sections, headers = _read_sections(text)

    ts_entries = sections["timescale"]
    seg = _need(ts_entries, "segments", "timescale", headers["timescale"])
    try:
        ts = parse_timescale(seg.value)
    except TimeScaleError as err:
        raise ProblemFileError(str(err), seg.line, seg.column) from None
    res_e = _get(ts_entries, "resolution")
    resolution = _integer(res_e) if res_e else DEFAULT_RESOLUTION
    if resolution < 1:
        raise ProblemFileError("resolution must be a positive integer", res_e.line, res_e.column)

    obj_entries = sections["objective"]
    objective = _composition(obj_entries, "objective", headers["objective"], "F")
    sense_e = _get(obj_entries, "sense")
    sense = sense_e.value if sense_e else "minimize"
    if sense not in ("minimize", "maximize"):
        raise ProblemFileError(f"sense must be minimize or maximize, got {sense!r}", sense_e.line, sense_e.column)

    b_entries = sections["boundary"]
    at_a = _endpoint(_need(b_entries, "a", "boundary", headers["boundary"]))
    at_b = _endpoint(_need(b_entries, "b", "boundary", headers["boundary"]))

    constraints: tuple[IsoConstraint, ...] = ()
    if "constraint" in sections:
        c_entries = sections["constraint"]
        fn = _composition(c_entries, "constraint", headers["constraint"], "G")
        target = _constant(_need(c_entries, "target", "constraint", headers["constraint"]))
        constraints = (IsoConstraint(fn.outer, fn.integrands, target),)

    problem = VariationalProblem(ts, resolution, objective, sense, BoundarySpec(at_a, at_b), constraints)

    trajectory = None
    source = None
    if "trajectory" in sections:
        t_entries = sections["trajectory"]
        vals_e, expr_e = _get(t_entries, "values"), _get(t_entries, "expr")
        if (vals_e is None) == (expr_e is None):
            raise ProblemFileError("[trajectory] needs exactly one of 'values' or 'expr'", headers["trajectory"])
        if expr_e is not None:
            ex = _expr(expr_e)
            if ex.free_vars - {"t"}:
                bad = sorted(ex.free_vars - {"t"})[0]
                raise ProblemFileError(f"unknown variable {bad} in trajectory", expr_e.line, expr_e.column)
            source = f"expr:{expr_e.value}"
            try:
                trajectory = _trajectory_from_source(problem, source)
            except (ExprEvalError, ValueError) as err:
                raise ProblemFileError(str(err), expr_e.line, expr_e.column) from None
        else:
            values = []
            col = vals_e.column
            for part in vals_e.value.split(","):
                lead = len(part) - len(part.lstrip())
                values.append(_constant(vals_e, part.strip(), col + lead))
                col += len(part) + 1
            if len(values) != problem.grid.size:
                raise ProblemFileError(
                    f"trajectory has {len(values)} values but the grid has {problem.grid.size} nodes",
                    vals_e.line,
                    vals_e.column,
                )
            source = "values:" + ",".join(repr(v) for v in values)
            trajectory = GridFunction(problem.grid, np.array(values))

    opts, use_traj = _solver_options(sections.get("solver", []))
    if use_traj and trajectory is None:
        e = _get(sections["solver"], "initializer")
        raise ProblemFileError("initializer = trajectory needs a [trajectory] section", e.line, e.column)
    return ProblemFile(problem, opts, trajectory, source, use_traj, path)


def _solver_options(entries: list[_Entry]) -> tuple[SolveOptions, bool]:
    kwargs: dict[str, Any] = {}
    use_traj = False
    for e in entries:
        if e.key == "initializer":
            if e.value not in ("linear", "trajectory"):
                raise ProblemFileError(f"initializer must be linear or trajectory, got {e.value!r}", e.line, e.column)
            use_traj = e.value == "trajectory"
        elif e.key in _FLOAT_OPTIONS:
            kwargs[e.key] = _constant(e)
        else:
            kwargs[e.key] = _integer(e)
    try:
        return SolveOptions(**kwargs), use_traj
    except ValueError as err:
        e = entries[0]
        raise ProblemFileError(str(err), e.line, e.column) from None


def load_problem(path: str | Path) -> ProblemFile:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as err:
        raise ProblemFileError(f"cannot read {path}: {err.strerror}", 1) from None
    return parse_problem_text(text, str(path))


# -- reports ------------------------------------------------------------------------


def _num(v: float | None) -> float | None:
    """JSON-safe float: NaN and infinities become null."""
    if v is None:
        return None
    v = float(v)
    return v if math.isfinite(v) else None


def _g(v: float | None) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return "n/a"
    return f"{v:.6g}"


def _fixed(v: float | None) -> str:
    return "n/a" if v is None or math.isnan(v) else f"{v:.6f}"


def problem_summary(pf: ProblemFile) -> dict:
    p = pf.problem
    out = {
        "file": pf.path,
        "timescale": str(p.timescale),
        "regular": is_regular(p.timescale),
        "resolution": p.resolution,
        "nodes": p.grid.size,
        "objective": {
            "outer": p.objective.outer.source,
            "integrands": [{"kind": ig.kind, "f": ig.f.source} for ig in p.objective.integrands],
            "sense": p.sense,
        },
        "boundary": {"a": p.boundary.at_a, "b": p.boundary.at_b},
        "constraint": None,
    }
    if p.constraints:
        c = p.constraints[0]
        out["constraint"] = {
            "outer": c.outer.source,
            "integrands": [{"kind": ig.kind, "f": ig.f.source} for ig in c.integrands],
            "target": c.target,
        }
    return out


def eval_report(pf: ProblemFile, x: GridFunction) -> dict:
    p = pf.problem
    ev = evaluate_functional(p.objective, p.grid, x.values)
    out = {
        "inner": {name: float(v) for name, v in zip(p.objective.names, ev.inner)},
        "objective": ev.value,
        "constraint_value": None,
    }
    if p.constraints:
        c = p.constraints[0]
        out["constraint_value"] = constraint_value(c, p.grid, x)
        out["constraint_target"] = c.target
    return out


def residual_report(pf: ProblemFile, x: GridFunction, tolerance: float | None = None) -> dict:
    p = pf.problem
    tol = default_tolerance(p.grid) if tolerance is None else tolerance
    el = el_residuals(p, x)
    tr = transversality(p, x)
    report: dict[str, Any] = {
        "tolerance": tol,
        "el": {
            "deviation_nabla": el.constancy_deviation_nabla,
            "deviation_delta": el.constancy_deviation_delta,
            "relative_deviation_nabla": el.relative_deviation_nabla,
            "relative_deviation_delta": el.relative_deviation_delta,
            "mean_nabla": _num(el.mean_nabla),
            "mean_delta": _num(el.mean_delta),
            "worst_t_nabla": _worst_node(p.grid.nodes, el.residual_nabla.values, el.valid_nabla),
            "worst_t_delta": _worst_node(p.grid.nodes, el.residual_delta.values, el.valid_delta),
        },
        "transversality": {
            "initial_residual": tr.initial_residual,
            "terminal_residual": tr.terminal_residual,
            "hypothesis_initial_ok": tr.hypothesis_initial_ok,
            "hypothesis_terminal_ok": tr.hypothesis_terminal_ok,
        },
        "iso": None,
    }
    ends = [abs(r) for r in (tr.initial_residual, tr.terminal_residual) if r is not None]
    if p.constraints:
        iso = iso_conditions(p, x)
        report["iso"] = {
            "lambda": _num(iso.lam),
            "lambda_defined": iso.lambda_defined,
            "normal": iso.normal,
            "condition_deviations": [_num(d) for d in iso.condition_deviations],
            "constraint_deviation_nabla": iso.constraint_deviation_nabla,
            "constraint_deviation_delta": iso.constraint_deviation_delta,
        }
        if iso.lambda_defined:
            checked = list(iso.condition_deviations)
        else:
            checked = [el.constancy_deviation_nabla, el.constancy_deviation_delta]
        # the free-end conditions also pick up the multiplier term
        ends = []
    else:
        checked = [el.constancy_deviation_nabla, el.constancy_deviation_delta]
    worst = max(checked + ends)
    report["max_deviation"] = worst
    report["extremal"] = bool(worst <= tol)
    report["verdict"] = "EXTREMAL (within tol)" if worst <= tol else "NOT extremal"
    return report


def _worst_node(t: np.ndarray, values: np.ndarray, mask: np.ndarray) -> float | None:
    """Node where a residual form is farthest from its mean."""
    if not mask.any():
        return None
    dev = np.where(mask, np.abs(values - values[mask].mean()), -1.0)
    return float(t[int(np.argmax(dev))])


def result_report(r: SolveResult) -> dict:
    return {
        "objective": r.objective,
        "gradient_norm": r.gradient_norm,
        "constraint_violation": r.constraint_violation,
        "lambda_estimate": _num(r.lambda_estimate),
        "penalty_lambda": _num(r.penalty_lambda) if r.iso is not None else None,
        "iterations": r.iterations,
        "converged": r.converged,
        "status": r.status,
        "x": {"t": [float(t) for t in r.x.grid.nodes], "values": [float(v) for v in r.x.values]},
    }


def identity_report(pf: ProblemFile) -> dict:
    """Interchange identities between the delta and nabla calculi on the file's grid."""
    p = pf.problem
    grid = p.grid
    tests = [
        ("sin(3*t) + t^2", lambda t: np.sin(3 * t) + t**2),
        ("exp(t/2)", lambda t: np.exp(t / 2)),
        ("t*cos(5*t)", lambda t: t * np.cos(5 * t)),
    ]
    funcs = [(name, GridFunction.sample(grid, fn)) for name, fn in tests]
    if pf.trajectory is not None:
        funcs.append(("trajectory", pf.trajectory))
    deriv_nabla = deriv_delta = int_delta = int_nabla = 0.0
    inner = grid.nodes[:: max(1, grid.size // 8)]
    bounds = [(lo, hi) for lo in inner for hi in inner if lo <= hi] + [(grid.nodes[0], grid.nodes[-1])]
    for _, f in funcs:
        nd = nabla_derivative(f).values
        deriv_nabla = max(deriv_nabla, float(np.max(np.abs(nd[1:] - nabla_deriv_from_delta(f).values[1:]))))
        dd = delta_derivative(f).values
        deriv_delta = max(deriv_delta, float(np.max(np.abs(dd[:-1] - delta_deriv_from_nabla(f).values[:-1]))))
        for lo, hi in bounds:
            int_delta = max(int_delta, abs(delta_integral(f, lo, hi) - integral_interchange_delta_to_nabla(f, lo, hi)))
            int_nabla = max(int_nabla, abs(nabla_integral(f, lo, hi) - integral_interchange_nabla_to_delta(f, lo, hi)))
    errors = {
        "nabla_derivative_vs_rho_of_delta": deriv_nabla,
        "delta_derivative_vs_sigma_of_nabla": deriv_delta,
        "delta_integral_vs_nabla_of_rho": int_delta,
        "nabla_integral_vs_delta_of_sigma": int_nabla,
    }
    x = pf.trajectory if pf.trajectory is not None else _el_probe(p)
    gap = el_residuals_differ_on_irregular(p, x)
    regular = is_regular(p.timescale)
    if regular:
        el_note = "regular: forms coincide" if gap <= IDENTITY_TOL else "regular: forms DIFFER"
    else:
        el_note = "irregular: forms differ" if gap > IDENTITY_TOL else "irregular: forms agree for this trajectory"
    return {
        "functions": [name for name, _ in funcs],
        "errors": errors,
        "max_error": max(errors.values()),
        "passed": max(errors.values()) <= IDENTITY_TOL,
        "el_form_gap": gap,
        "el_forms": el_note,
    }


def _el_probe(p: VariationalProblem) -> GridFunction:
    """A generic non-extremal trajectory matching the boundary data."""
    base = p.linear_initializer().values
    t = p.grid.nodes
    s = (t - t[0]) / (t[-1] - t[0])
    return GridFunction(p.grid, base + 0.3 * np.sin(np.pi * s) + 0.1 * s * s)


def write_trace(pf: ProblemFile, x: GridFunction, stream: IO[str]) -> None:
    """Per-node columns for plotting the optimality residuals."""
    p = pf.problem
    el = el_residuals(p, x)
    cols = {
        "t": p.grid.nodes,
        "x": x.values,
        "x_delta": delta_derivative(x).values,
        "x_nabla": nabla_derivative(x).values,
        "xi": el.xi.values,
        "chi": el.chi.values,
        "residual_nabla": el.residual_nabla.values,
        "residual_delta": el.residual_delta.values,
    }
    if p.constraints:
        u, w = compute_u_w(p.constraints[0], p.grid, x)
        cols["u"] = u.values
        cols["w"] = w.values
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(list(cols))
    for row in zip(*cols.values()):
        writer.writerow([repr(float(v)) for v in row])


# -- human-readable output ------------------------------------------------------------


def _print_eval(rep: dict, out: IO[str]) -> None:
    for name, v in rep["inner"].items():
        print(f"{name} = {_g(v)}", file=out)
    print(f"L = {_g(rep['objective'])}", file=out)
    if rep["constraint_value"] is not None:
        print(f"K = {_g(rep['constraint_value'])} (target {_g(rep['constraint_target'])})", file=out)


def _print_residual(rep: dict, out: IO[str]) -> None:
    el = rep["el"]
    tol = rep["tolerance"]
    for form in ("nabla", "delta"):
        dev = el[f"deviation_{form}"]
        where = f" (worst at t = {_g(el[f'worst_t_{form}'])})" if dev > tol else ""
        print(f"EL constancy deviation ({form} form): {_g(dev)}{where}", file=out)
    print(f"EL constants: nabla {_g(el['mean_nabla'])}, delta {_g(el['mean_delta'])}", file=out)
    tr = rep["transversality"]
    if tr["initial_residual"] is not None:
        print(f"transversality at a: {_g(tr['initial_residual'])}", file=out)
    if tr["terminal_residual"] is not None:
        print(f"transversality at b: {_g(tr['terminal_residual'])}", file=out)
    iso = rep["iso"]
    if iso is not None:
        print(f"lambda = {_fixed(iso['lambda'])}  (normal: {'yes' if iso['normal'] else 'no'})", file=out)
        devs = ", ".join(_g(d) for d in iso["condition_deviations"])
        print(f"iso condition deviations: {devs}", file=out)
    print(f"tolerance: {_g(rep['tolerance'])}", file=out)
    print(f"verdict: {rep['verdict']}", file=out)


def _print_solve(rep: dict, out: IO[str]) -> None:
    print(f"status: {rep['status']} after {rep['iterations']} iterations", file=out)
    print(f"objective = {_g(rep['objective'])}", file=out)
    print(f"gradient norm = {_g(rep['gradient_norm'])}", file=out)
    if rep["penalty_lambda"] is not None or rep["lambda_estimate"] is not None:
        print(f"constraint violation = {_g(rep['constraint_violation'])}", file=out)
        print(f"lambda (fit) = {_fixed(rep['lambda_estimate'])}, lambda (penalty) = {_fixed(rep['penalty_lambda'])}", file=out)
    print(f"converged: {'yes' if rep['converged'] else 'no'}", file=out)
    xs = rep["x"]
    if len(xs["t"]) <= 12:
        for t, v in zip(xs["t"], xs["values"]):
            print(f"  x({_g(t)}) = {_g(v)}", file=out)


def _print_verify(rep: dict, out: IO[str]) -> None:
    for name, v in rep["errors"].items():
        print(f"{name}: max error {_g(v)}", file=out)
    print(rep["el_forms"] + f" (max gap {_g(rep['el_form_gap'])})", file=out)
    print("identities: " + ("PASS" if rep["passed"] else "FAIL"), file=out)


# -- commands -----------------------------------------------------------------------


def _trajectory_or_initializer(pf: ProblemFile) -> GridFunction:
    return pf.trajectory if pf.trajectory is not None else pf.problem.linear_initializer()


def run_command(command: str, pf: ProblemFile, args: argparse.Namespace, out: IO[str]) -> tuple[dict, int]:
    """Execute one command; returns the JSON document and the exit code."""
    doc: dict[str, Any] = {"schema_version": SCHEMA_VERSION, "command": command, "problem": problem_summary(pf)}
    timings: dict[str, float] = {}
    code = EXIT_OK
    t0 = time.perf_counter()
    if command == "eval":
        x = _trajectory_or_initializer(pf)
        doc["result"] = eval_report(pf, x)
        if not args.json:
            _print_eval(doc["result"], out)
    elif command == "residual":
        if pf.trajectory is None:
            raise ProblemFileError("residual needs a [trajectory] section", 1)
        x = pf.trajectory
        doc["result"] = eval_report(pf, x)
        doc["residual"] = residual_report(pf, x)
        if not args.json:
            _print_eval(doc["result"], out)
            _print_residual(doc["residual"], out)
        if args.trace:
            with open(args.trace, "w", encoding="utf-8", newline="") as fh:
                write_trace(pf, x, fh)
    elif command == "solve":
        opts = pf.options
        if pf.use_trajectory_initializer:
            opts = replace(opts, initializer=pf.trajectory)
        r = solve_direct(pf.problem, opts)
        timings["solve_seconds"] = time.perf_counter() - t0
        doc["result"] = result_report(r)
        doc["residual"] = residual_report(pf, r.x)
        if not args.json:
            _print_solve(doc["result"], out)
            _print_residual(doc["residual"], out)
        if args.out:
            with open(args.out, "w", encoding="utf-8", newline="") as fh:
                write_csv(r.x, fh)
        if args.trace:
            with open(args.trace, "w", encoding="utf-8", newline="") as fh:
                write_trace(pf, r.x, fh)
        code = EXIT_OK if r.converged else EXIT_NOT_CONVERGED
    elif command == "verify":
        doc["result"] = identity_report(pf)
        if not args.json:
            _print_verify(doc["result"], out)
        code = EXIT_OK if doc["result"]["passed"] else EXIT_IDENTITY
    else:  # pragma: no cover - argparse restricts the choices
        raise ValueError(command)
    timings["total_seconds"] = time.perf_counter() - t0
    doc["timings"] = timings
    return doc, code


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tsvar", description="Delta-nabla variational problems on time scales.")
    ap.add_argument("command", choices=["eval", "residual", "solve", "verify"])
    ap.add_argument("problem", help="problem file")
    ap.add_argument("--json", action="store_true", help="print one JSON object instead of text")
    ap.add_argument("--out", metavar="FILE", help="solve: write the trajectory as CSV")
    ap.add_argument("--trace", metavar="FILE", help="residual/solve: write per-node residual traces as CSV")
    ap.add_argument("--seed", type=int, help="override the solver seed")
    ap.add_argument("--resolution", type=int, help="override the dense grid resolution")
    return ap


def main(argv: Sequence[str] | None = None, out: IO[str] | None = None, err: IO[str] | None = None) -> int:
    out = sys.stdout if out is None else out
    err = sys.stderr if err is None else err
    args = build_parser().parse_args(argv)
    try:
        pf = load_problem(args.problem)
        if args.resolution is not None:
            if args.resolution < 1:
                raise ProblemFileError("--resolution must be a positive integer", 1)
            pf = pf.with_resolution(args.resolution)
        if args.seed is not None:
            pf = replace(pf, options=replace(pf.options, seed=args.seed))
        doc, code = run_command(args.command, pf, args, out)
    except (ProblemFileError, ProblemError, TimeScaleError, ExprSyntaxError) as e:
        print(f"{args.problem}: error: {e}", file=err)
        return EXIT_INPUT
    except (ExprEvalError, SolverError) as e:
        print(f"{args.problem}: domain error: {e}", file=err)
        return EXIT_DOMAIN
    except ValueError as e:
        print(f"{args.problem}: error: {e}", file=err)
        return EXIT_INPUT
    if args.json:
        print(json.dumps(doc, indent=2, allow_nan=False), file=out)
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
