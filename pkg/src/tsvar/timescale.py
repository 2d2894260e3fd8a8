"""Bounded time scales: exact jump operators and computation grids.

A time scale is stored structurally as a sorted list of disjoint closed
segments.  Each segment is either an interval ``(lo, hi)`` with ``lo < hi``
or an isolated point ``(p, p)``.  The jump operators are read off this list
directly, so they are exact at scattered points no matter how coarse the
grid used for integration is.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Iterable, Literal

import numpy as np

TOL = 1e-12

Side = Literal["dense", "scattered"]


class TimeScaleError(ValueError):
    pass


@dataclass(frozen=True)
class PointClass:
    left: Side
    right: Side


@dataclass(frozen=True)
class TimeScale:
    segments: tuple[tuple[float, float], ...]

    @property
    def a(self) -> float:
        return self.segments[0][0]

    @property
    def b(self) -> float:
        return self.segments[-1][1]

    def __str__(self) -> str:
        return ",".join(
            f"{{{_fmt(lo)}}}" if lo == hi else f"[{_fmt(lo)},{_fmt(hi)}]"
            for lo, hi in self.segments
        )

    def _locate(self, t: float) -> tuple[int, float]:
        """Segment index containing ``t`` and ``t`` snapped onto it."""
        for i, (lo, hi) in enumerate(self.segments):
            if lo - TOL <= t <= hi + TOL:
                if abs(t - lo) <= TOL:
                    return i, lo
                if abs(t - hi) <= TOL:
                    return i, hi
                return i, float(t)
        raise TimeScaleError(f"{t!r} is not a point of the time scale {self}")

    def contains(self, t: float) -> bool:
        try:
            self._locate(t)
        except TimeScaleError:
            return False
        return True


def _fmt(v: float) -> str:
    s = repr(float(v))
    return s[:-2] if s.endswith(".0") else s


def make_timescale(segments: Iterable[tuple[float, float]]) -> TimeScale:
    """Build the canonical time scale from ``(lo, hi)`` pairs.

    Pairs with ``lo == hi`` are isolated points.  Touching segments are
    merged; overlapping ones are rejected.
    """
    segs = []
    for pair in segments:
        lo, hi = (float(v) for v in pair)
        if not (math.isfinite(lo) and math.isfinite(hi)):
            raise TimeScaleError(f"non-finite segment bound in {pair!r}")
        if lo > hi:
            raise TimeScaleError(f"segment {pair!r} has lo > hi")
        segs.append((lo, hi))
    if not segs:
        raise TimeScaleError("a time scale needs at least one segment")
    segs.sort()

    merged: list[tuple[float, float]] = [segs[0]]
    for lo, hi in segs[1:]:
        plo, phi = merged[-1]
        if lo < phi - TOL:
            raise TimeScaleError(f"segments ({plo}, {phi}) and ({lo}, {hi}) overlap")
        if lo <= phi + TOL:
            # touching: a point on an interval endpoint, or two intervals sharing one
            merged[-1] = (plo, max(phi, hi))
        else:
            merged.append((lo, hi))

    if merged[0][0] >= merged[-1][1]:
        raise TimeScaleError("a time scale needs at least two distinct points")
    return TimeScale(tuple(merged))


_SEGMENT_RE = re.compile(r"\s*(?:\[([^\[\]{},]+),([^\[\]{},]+)\]|\{([^\[\]{},]+)\})\s*(,|$)")


def parse_timescale(text: str) -> TimeScale:
    """Parse ``[0,1],[2,3]`` / ``{0},{0.5},{1}`` segment syntax.

    Bounds may be decimal numbers or simple ratios such as ``1/3``.
    """
    pos = 0
    pairs = []
    text = text.strip()
    if not text:
        raise TimeScaleError("empty time scale")
    while pos < len(text):
        m = _SEGMENT_RE.match(text, pos)
        if m is None:
            raise TimeScaleError(f"bad time scale syntax at offset {pos}: {text[pos:]!r}")
        if m.group(3) is not None:
            p = _number(m.group(3))
            pairs.append((p, p))
        else:
            pairs.append((_number(m.group(1)), _number(m.group(2))))
        pos = m.end()
        if m.group(4) == "" and pos < len(text):
            raise TimeScaleError(f"bad time scale syntax at offset {pos}")
    return make_timescale(pairs)


def _number(s: str) -> float:
    s = s.strip()
    try:
        if "/" in s:
            num, den = s.split("/")
            return float(num) / float(den)
        return float(s)
    except (ValueError, ZeroDivisionError):
        raise TimeScaleError(f"bad number {s!r}") from None


def sigma(ts: TimeScale, t: float) -> float:
    """Forward jump: the least point of ``ts`` strictly after ``t``."""
    i, t = ts._locate(t)
    lo, hi = ts.segments[i]
    if t < hi:
        return t
    if i + 1 < len(ts.segments):
        return ts.segments[i + 1][0]
    return t


def rho(ts: TimeScale, t: float) -> float:
    """Backward jump: the greatest point of ``ts`` strictly before ``t``."""
    i, t = ts._locate(t)
    lo, hi = ts.segments[i]
    if t > lo:
        return t
    if i > 0:
        return ts.segments[i - 1][1]
    return t


def mu(ts: TimeScale, t: float) -> float:
    return sigma(ts, t) - ts._locate(t)[1]


def nu(ts: TimeScale, t: float) -> float:
    return ts._locate(t)[1] - rho(ts, t)


def classify(ts: TimeScale, t: float) -> PointClass:
    _, t = ts._locate(t)
    left: Side = "scattered" if rho(ts, t) < t else "dense"
    right: Side = "scattered" if sigma(ts, t) > t else "dense"
    return PointClass(left, right)


def is_regular(ts: TimeScale) -> bool:
    """True iff ``sigma(rho(t)) == t`` and ``rho(sigma(t)) == t`` for every t.

    For a bounded scale both identities fail at any point dense on one side
    and scattered on the other, at a right-scattered minimum and at a
    left-scattered maximum.  The only survivors are single intervals.
    """
    return len(ts.segments) == 1 and ts.a < ts.b


def in_kappa_upper(ts: TimeScale, t: float) -> bool:
    """Membership in T^kappa (drops a left-scattered maximum)."""
    _, t = ts._locate(t)
    return not (t == ts.b and rho(ts, t) < t)


def in_kappa_lower(ts: TimeScale, t: float) -> bool:
    """Membership in T_kappa (drops a right-scattered minimum)."""
    _, t = ts._locate(t)
    return not (t == ts.a and sigma(ts, t) > t)


@dataclass(frozen=True)
class Grid:
    """Finite sample of a time scale containing all of its scattered structure.

    ``sigma_index[i]`` / ``rho_index[i]`` hold the node index of the exact
    jump of node ``i``: a scattered neighbour is always a node, and a dense
    side maps a node to itself.
    """

    timescale: TimeScale
    nodes: np.ndarray
    dense_resolution: int
    sigma_index: np.ndarray = field(repr=False)
    rho_index: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return len(self.nodes)

    @property
    def steps(self) -> np.ndarray:
        return np.diff(self.nodes)

    def index_of(self, t: float) -> int:
        i = int(np.searchsorted(self.nodes, t - TOL))
        if i < len(self.nodes) and abs(self.nodes[i] - t) <= TOL:
            return i
        raise TimeScaleError(f"{t!r} is not a grid node")


def build_grid(ts: TimeScale, dense_resolution: int) -> Grid:
    """Nodes: every isolated point and segment end, plus a uniform
    subdivision of each interval into ``ceil(length * dense_resolution)`` cells."""
    if int(dense_resolution) != dense_resolution or dense_resolution < 1:
        raise ValueError(f"dense_resolution must be a positive integer, got {dense_resolution!r}")
    dense_resolution = int(dense_resolution)
    pieces = []
    for lo, hi in ts.segments:
        if lo == hi:
            pieces.append(np.array([lo]))
        else:
            cells = max(1, math.ceil((hi - lo) * dense_resolution - 1e-9))
            pts = np.linspace(lo, hi, cells + 1)
            pts[-1] = hi
            pieces.append(pts)
    nodes = np.unique(np.concatenate(pieces))
    n = len(nodes)
    sig = np.arange(n)
    rh = np.arange(n)
    for i, t in enumerate(nodes):
        if i + 1 < n and sigma(ts, t) > t:
            sig[i] = i + 1
        if i > 0 and rho(ts, t) < t:
            rh[i] = i - 1
    for arr in (nodes, sig, rh):
        arr.setflags(write=False)
    return Grid(ts, nodes, dense_resolution, sig, rh)
