import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tsvar.timescale import (
    TimeScaleError,
    build_grid,
    classify,
    in_kappa_lower,
    in_kappa_upper,
    is_regular,
    make_timescale,
    mu,
    nu,
    parse_timescale,
    rho,
    sigma,
)

P11 = make_timescale([(0, 1), (2, 3)])
HALF = make_timescale([(0, 0), (0.5, 0.5), (1, 1)])
UNIT = make_timescale([(0, 1)])


def test_construction_examples():
    assert P11.segments == ((0.0, 1.0), (2.0, 3.0))
    assert HALF.segments == ((0.0, 0.0), (0.5, 0.5), (1.0, 1.0))
    assert make_timescale([(0, 0.5), (0.5, 1)]).segments == ((0.0, 1.0),)
    assert (P11.a, P11.b) == (0.0, 3.0)


def test_construction_sorts():
    ts = make_timescale([(2, 3), (1.5, 1.5), (0, 1)])
    assert ts.segments == ((0.0, 1.0), (1.5, 1.5), (2.0, 3.0))


@pytest.mark.parametrize(
    "segments",
    [[], [(0, 0)], [(1, 1), (1, 1)], [(0, 2), (1, 3)], [(0, 1), (0.5, 0.5)], [(0, math.nan)], [(0, math.inf)], [(1, 0)]],
)
def test_construction_errors(segments):
    with pytest.raises(TimeScaleError):
        make_timescale(segments)


def test_parse_and_print():
    assert parse_timescale("[0,1],[2,3]") == P11
    assert parse_timescale("{0}, {0.5}, {1}") == HALF
    assert parse_timescale("{0},{1/3},{1}").segments[1] == (1 / 3, 1 / 3)
    assert parse_timescale(str(P11)) == P11
    assert parse_timescale(str(HALF)) == HALF
    for bad in ("", "[0,1", "[0,1];{2}", "(0,1)"):
        with pytest.raises(TimeScaleError):
            parse_timescale(bad)


def test_jump_operators():
    assert sigma(P11, 1) == 2
    assert sigma(P11, 0.5) == 0.5
    assert sigma(HALF, 0.5) == 1
    assert sigma(P11, 3) == 3
    assert rho(P11, 2) == 1
    assert rho(P11, 0) == 0
    assert rho(HALF, 0.5) == 0
    with pytest.raises(TimeScaleError):
        sigma(P11, 1.5)
    with pytest.raises(TimeScaleError):
        rho(HALF, 0.25)


def test_graininess():
    assert mu(HALF, 0) == 0.5
    assert mu(P11, 0.3) == 0
    assert nu(P11, 2) == 1
    assert nu(HALF, 0) == 0


def test_classify():
    c = classify(P11, 1)
    assert (c.left, c.right) == ("dense", "scattered")
    c = classify(P11, 2)
    assert (c.left, c.right) == ("scattered", "dense")
    c = classify(HALF, 0.5)
    assert (c.left, c.right) == ("scattered", "scattered")


def test_regularity():
    assert is_regular(UNIT)
    assert not is_regular(HALF)
    assert not is_regular(P11)


def test_kappa_sets():
    assert not in_kappa_upper(HALF, 1)
    assert not in_kappa_lower(HALF, 0)
    assert in_kappa_upper(UNIT, 1)
    assert in_kappa_lower(UNIT, 0)
    assert in_kappa_upper(HALF, 0.5) and in_kappa_lower(HALF, 0.5)


def test_grid_examples():
    assert list(build_grid(HALF, 7).nodes) == [0, 0.5, 1]
    assert list(build_grid(UNIT, 2).nodes) == [0, 0.5, 1]
    assert list(build_grid(P11, 1).nodes) == [0, 1, 2, 3]
    g = build_grid(P11, 4)
    assert g.size == 10
    assert g.nodes[g.sigma_index[g.index_of(1)]] == 2
    assert g.nodes[g.rho_index[g.index_of(2)]] == 1
    with pytest.raises(ValueError):
        build_grid(UNIT, 0)


# -- properties over random finite time scales ---------------------------------------


@st.composite
def timescales(draw):
    """Sorted disjoint segments with gaps, mixing points and intervals."""
    n = draw(st.integers(1, 5))
    pos = draw(st.integers(-3, 3)) / 2
    segs = []
    for _ in range(n):
        if draw(st.booleans()):
            length = draw(st.integers(1, 4)) / 4
            segs.append((pos, pos + length))
            pos += length
        else:
            segs.append((pos, pos))
        pos += draw(st.integers(1, 4)) / 4
    if len(segs) == 1 and segs[0][0] == segs[0][1]:
        segs.append((pos, pos))
    return make_timescale(segs)


@settings(max_examples=60, deadline=None)
@given(timescales(), st.integers(1, 6))
def test_jump_properties_on_grid_nodes(ts, res):
    g = build_grid(ts, res)
    assert g.nodes[0] == ts.a and g.nodes[-1] == ts.b
    prev_s = prev_r = -math.inf
    for i, t in enumerate(g.nodes):
        assert ts.contains(t)
        s, r = sigma(ts, t), rho(ts, t)
        assert s >= t and r <= t
        assert s >= prev_s and r >= prev_r
        prev_s, prev_r = s, r
        assert rho(ts, s) <= t <= sigma(ts, r)
        assert (mu(ts, t) == 0) == (classify(ts, t).right == "dense")
        # exact jumps coincide with the grid's jump indices when they move
        if s > t:
            assert g.nodes[g.sigma_index[i]] == s
        if r < t:
            assert g.nodes[g.rho_index[i]] == r


@settings(max_examples=60, deadline=None)
@given(timescales(), st.integers(1, 6))
def test_is_regular_matches_brute_force(ts, res):
    g = build_grid(ts, res)
    brute = all(sigma(ts, rho(ts, t)) == t and rho(ts, sigma(ts, t)) == t for t in g.nodes)
    assert is_regular(ts) == brute


@settings(max_examples=40, deadline=None)
@given(timescales())
def test_segment_points_are_nodes(ts):
    g = build_grid(ts, 3)
    for lo, hi in ts.segments:
        g.index_of(lo)
        g.index_of(hi)
