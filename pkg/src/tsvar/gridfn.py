"""Functions on a grid: delta/nabla derivatives and integrals.

Every node of a grid is treated as a scattered point of the discretized time
scale, so the forward/backward differences and left/right rectangle sums
below are the *exact* delta/nabla calculus of that discrete scale.  The
interchange identities between the two calculi then hold to rounding error.

Arrays stay rectangular: the delta derivative at the last node and the nabla
derivative at the first node are copies of their neighbours.  Consumers that
need genuine values skip those nodes (see ``delta_valid`` / ``nabla_valid``).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import IO, Callable

import numpy as np

from .timescale import Grid, in_kappa_lower, in_kappa_upper


@dataclass(frozen=True)
class GridFunction:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.shape != (self.grid.size,):
            raise ValueError(f"expected {self.grid.size} values, got shape {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("grid function values must be finite")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def sample(cls, grid: Grid, fn: Callable[[np.ndarray], np.ndarray]) -> "GridFunction":
        return cls(grid, np.broadcast_to(fn(grid.nodes), grid.nodes.shape))

    def __len__(self) -> int:
        return len(self.values)

    def at(self, t: float) -> float:
        return float(self.values[self.grid.index_of(t)])


def _check(f: GridFunction) -> None:
    if f.grid.size < 2:
        raise ValueError("need at least two grid nodes")


def forward_difference(grid: Grid, x: np.ndarray) -> np.ndarray:
    d = np.diff(x) / grid.steps
    return np.append(d, d[-1])


def backward_difference(grid: Grid, x: np.ndarray) -> np.ndarray:
    d = np.diff(x) / grid.steps
    return np.insert(d, 0, d[0])


def shift_forward(x: np.ndarray) -> np.ndarray:
    return np.append(x[1:], x[-1])


def shift_backward(x: np.ndarray) -> np.ndarray:
    return np.insert(x[:-1], 0, x[0])


def delta_derivative(f: GridFunction) -> GridFunction:
    _check(f)
    return GridFunction(f.grid, forward_difference(f.grid, f.values))


def nabla_derivative(f: GridFunction) -> GridFunction:
    _check(f)
    return GridFunction(f.grid, backward_difference(f.grid, f.values))


def compose_sigma(f: GridFunction) -> GridFunction:
    return GridFunction(f.grid, shift_forward(f.values))


def compose_rho(f: GridFunction) -> GridFunction:
    return GridFunction(f.grid, shift_backward(f.values))


def _bounds(grid: Grid, lo: float, hi: float) -> tuple[int, int]:
    i, j = grid.index_of(lo), grid.index_of(hi)
    if i > j:
        raise ValueError(f"integration bounds out of order: {lo} > {hi}")
    return i, j


def delta_integral(f: GridFunction, lo: float, hi: float) -> float:
    """Left rectangle sum over nodes ``lo <= t_i < hi``."""
    i, j = _bounds(f.grid, lo, hi)
    return float(np.dot(f.values[i:j], f.grid.steps[i:j]))


def nabla_integral(f: GridFunction, lo: float, hi: float) -> float:
    """Right rectangle sum over nodes ``lo < t_i <= hi``."""
    i, j = _bounds(f.grid, lo, hi)
    return float(np.dot(f.values[i + 1 : j + 1], f.grid.steps[i:j]))


def cumulative_delta(grid: Grid, values: np.ndarray) -> np.ndarray:
    """``out[i]`` is the delta integral from ``a`` to node ``i``."""
    return np.concatenate([[0.0], np.cumsum(values[:-1] * grid.steps)])


def cumulative_nabla(grid: Grid, values: np.ndarray) -> np.ndarray:
    """``out[i]`` is the nabla integral from ``a`` to node ``i``."""
    return np.concatenate([[0.0], np.cumsum(values[1:] * grid.steps)])


def nabla_deriv_from_delta(f: GridFunction) -> GridFunction:
    return compose_rho(delta_derivative(f))


def delta_deriv_from_nabla(f: GridFunction) -> GridFunction:
    return compose_sigma(nabla_derivative(f))


def integral_interchange_delta_to_nabla(f: GridFunction, lo: float, hi: float) -> float:
    """Delta integral of f computed as the nabla integral of f composed with rho."""
    return nabla_integral(compose_rho(f), lo, hi)


def integral_interchange_nabla_to_delta(f: GridFunction, lo: float, hi: float) -> float:
    """Nabla integral of f computed as the delta integral of f composed with sigma."""
    return delta_integral(compose_sigma(f), lo, hi)


def delta_valid(grid: Grid) -> np.ndarray:
    """Nodes where the stored delta derivative is a genuine difference."""
    ok = np.ones(grid.size, dtype=bool)
    ok[-1] = False
    return ok


def nabla_valid(grid: Grid) -> np.ndarray:
    ok = np.ones(grid.size, dtype=bool)
    ok[0] = False
    return ok


def kappa_flags(grid: Grid) -> list[str]:
    """Per-node membership tags: ``K^`` for T^kappa, ``K_`` for T_kappa,
    ``copyD`` / ``copyN`` where a derivative value is a boundary copy."""
    ts = grid.timescale
    out = []
    for i, t in enumerate(grid.nodes):
        tags = []
        if in_kappa_upper(ts, t):
            tags.append("K^")
        if in_kappa_lower(ts, t):
            tags.append("K_")
        if i == grid.size - 1:
            tags.append("copyD")
        if i == 0:
            tags.append("copyN")
        out.append("|".join(tags))
    return out


def write_csv(f: GridFunction, stream: IO[str]) -> None:
    """Columns: t, value, delta_deriv, nabla_deriv, flags."""
    d = delta_derivative(f).values
    n = nabla_derivative(f).values
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["t", "value", "delta_deriv", "nabla_deriv", "flags"])
    for row in zip(f.grid.nodes, f.values, d, n, kappa_flags(f.grid)):
        writer.writerow([repr(float(row[0])), repr(float(row[1])), repr(float(row[2])), repr(float(row[3])), row[4]])
