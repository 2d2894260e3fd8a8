"""Calculus of variations with delta and nabla derivatives on time scales."""

from .expr import Expression, ExprEvalError, ExprSyntaxError, parse
from .gridfn import GridFunction
from .optimality import el_residuals, iso_conditions, transversality
from .solver import SolveOptions, SolveResult, find_scalar_roots, solve_direct, solve_isoperimetric
from .timescale import Grid, TimeScale, build_grid, make_timescale, parse_timescale
from .varproblem import (
    BoundarySpec,
    CompositionFunctional,
    Integrand,
    IsoConstraint,
    VariationalProblem,
    functional,
    objective_gradient,
    objective_value,
)

__all__ = [
    "BoundarySpec",
    "CompositionFunctional",
    "ExprEvalError",
    "ExprSyntaxError",
    "Expression",
    "Grid",
    "GridFunction",
    "Integrand",
    "IsoConstraint",
    "SolveOptions",
    "SolveResult",
    "TimeScale",
    "VariationalProblem",
    "build_grid",
    "el_residuals",
    "find_scalar_roots",
    "functional",
    "iso_conditions",
    "make_timescale",
    "objective_gradient",
    "objective_value",
    "parse",
    "parse_timescale",
    "solve_direct",
    "solve_isoperimetric",
    "transversality",
]
