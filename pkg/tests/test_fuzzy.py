import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fpvide.fuzzy import (FuzzyField, FuzzyScalar, GridMismatchError, MembershipGrid, NoHukuharaDifference,
                          fuzzy_add, fuzzy_scale, hausdorff_distance, hukuhara_diff, is_valid, validate)

G = MembershipGrid.uniform(11)
R = G.r


def fz(lower, upper, grid=G):
    return FuzzyScalar(grid, lower(grid.r), upper(grid.r))


def same(u, v, tol=0.0):
    return np.allclose(u.lower, v.lower, atol=tol, rtol=0) and np.allclose(u.upper, v.upper, atol=tol, rtol=0)


def test_grid_invariants():
    with pytest.raises(ValueError):
        MembershipGrid((0.0,))
    with pytest.raises(ValueError):
        MembershipGrid((0.1, 1.0))
    with pytest.raises(ValueError):
        MembershipGrid((0.0, 0.5, 0.5, 1.0))
    assert MembershipGrid.uniform(11).levels[1] == pytest.approx(0.1)


def test_add_examples():
    u = fz(lambda r: r - 1, lambda r: 1 - r)
    assert same(fuzzy_add(u, u), fz(lambda r: 2 * r - 2, lambda r: 2 - 2 * r))
    assert same(u + FuzzyScalar.crisp(0.0, G), u)
    v = fz(lambda r: r, lambda r: 2 - r)
    s = v + v
    assert (s.lower[-1], s.upper[-1]) == (2.0, 2.0)


def test_scale_examples():
    v = fz(lambda r: r, lambda r: 2 - r)
    assert same(fuzzy_scale(2, v), fz(lambda r: 2 * r, lambda r: 4 - 2 * r))
    assert same(fuzzy_scale(-2, v), fz(lambda r: 2 * r - 4, lambda r: -2 * r))
    assert same(0 * v, FuzzyScalar.crisp(0.0, G))


def test_hukuhara_examples():
    u = fz(lambda r: r, lambda r: 4 - r)
    v = fz(lambda r: 0 * r, lambda r: 1 - r)
    z = hukuhara_diff(u, v)
    assert same(z, fz(lambda r: r, lambda r: 3 + 0 * r))
    # brute-force check u = v + z at every level
    for k in range(len(G)):
        assert v.lower[k] + z.lower[k] == u.lower[k]
        assert v.upper[k] + z.upper[k] == u.upper[k]
    assert same(hukuhara_diff(u, FuzzyScalar.crisp(0.0, G)), u)
    with pytest.raises(NoHukuharaDifference, match="condition 1"):
        hukuhara_diff(FuzzyScalar.crisp(0.0, G), fz(lambda r: r - 1, lambda r: 1 - r))


def test_distance_examples():
    u = fz(lambda r: r - 1, lambda r: 1 - r)
    assert hausdorff_distance(u, FuzzyScalar.crisp(0.0, G)) == 1.0
    assert hausdorff_distance(u, u) == 0.0


def test_validate_examples():
    assert validate(fz(lambda r: r, lambda r: 2 - r)) == []
    assert any("condition 1" in m for m in validate(fz(lambda r: 1 - r, lambda r: 2 - r)))
    lo = np.where(np.isclose(R, 0.5), 2.0, 0.0)
    up = np.where(np.isclose(R, 0.5), 1.0, 3.0)
    msgs = validate(FuzzyScalar(G, lo, up))
    assert any("condition 3" in m and "r=0.5" in m for m in msgs)


def test_grid_mismatch():
    other = MembershipGrid.uniform(5)
    with pytest.raises(GridMismatchError):
        fuzzy_add(FuzzyScalar.crisp(1.0, G), FuzzyScalar.crisp(1.0, other))


def test_field_reports_bad_points():
    lo = np.zeros((2, 1, len(G)))
    up = np.ones((2, 1, len(G)))
    lo[1, 0, 3] = 2.0
    field = FuzzyField([0.0, 1.0], [0.5], G, lo, up)
    bad = field.violations()
    assert len(bad) == 1 and bad[0].startswith("x=1, t=0.5")


# randomised valid fuzzy numbers: a core interval widened by non-negative spreads

@st.composite
def fuzzy_numbers(draw, grid=G):
    n = len(grid)
    core = draw(st.floats(-50, 50))
    width = draw(st.floats(0, 10))
    left = np.cumsum(draw(st.lists(st.floats(0, 5), min_size=n, max_size=n)))[::-1]
    right = np.cumsum(draw(st.lists(st.floats(0, 5), min_size=n, max_size=n)))[::-1]
    left = left - left[-1]
    right = right - right[-1]
    return FuzzyScalar(grid, core - left, core + width + right)


scalars = st.floats(-20, 20)
EPS = 1e-9


@settings(max_examples=1000, deadline=None)
@given(fuzzy_numbers(), fuzzy_numbers(), fuzzy_numbers())
def test_metric_axioms(u, v, w):
    d = hausdorff_distance
    assert d(u, v) >= 0
    assert d(u, v) == d(v, u)
    assert d(u, w) <= d(u, v) + d(v, w) + EPS
    assert abs(d(u + w, v + w) - d(u, v)) <= EPS


@settings(max_examples=1000, deadline=None)
@given(fuzzy_numbers(), fuzzy_numbers(), fuzzy_numbers(), fuzzy_numbers())
def test_sum_triangle_inequality(u, v, w, e):
    d = hausdorff_distance
    assert d(u + v, w + e) <= d(u, w) + d(v, e) + EPS * 100


@settings(max_examples=1000, deadline=None)
@given(fuzzy_numbers(), fuzzy_numbers(), scalars)
def test_scalar_homogeneity(u, v, k):
    d = hausdorff_distance
    assert abs(d(fuzzy_scale(k, u), fuzzy_scale(k, v)) - abs(k) * d(u, v)) <= EPS * (1 + abs(k) * 100)


@settings(max_examples=1000, deadline=None)
@given(fuzzy_numbers(), fuzzy_numbers(), scalars)
def test_arithmetic_closure(u, v, k):
    assert is_valid(u + v)
    assert is_valid(fuzzy_scale(k, u))


@settings(max_examples=1000, deadline=None)
@given(fuzzy_numbers(), fuzzy_numbers())
def test_hukuhara_soundness(u, v):
    try:
        z = hukuhara_diff(u, v)
    except NoHukuharaDifference:
        # the candidate must really be invalid
        assert validate(FuzzyScalar(G, u.lower - v.lower, u.upper - v.upper))
        return
    back = v + z
    assert np.allclose(back.lower, u.lower, rtol=0, atol=1e-12 * (1 + np.max(np.abs(u.lower))))
    assert np.allclose(back.upper, u.upper, rtol=0, atol=1e-12 * (1 + np.max(np.abs(u.upper))))


@settings(max_examples=1000, deadline=None)
@given(fuzzy_numbers(), fuzzy_numbers())
def test_sum_minus_summand_is_realizable(u, v):
    z = hukuhara_diff(u + v, v)
    assert hausdorff_distance(z, u) <= 1e-10 * (1 + np.max(np.abs(u.upper)) + np.max(np.abs(v.upper)))


@given(scalars, scalars)
def test_crisp_embedding(y, z):
    assert hausdorff_distance(FuzzyScalar.crisp(y, G), FuzzyScalar.crisp(z, G)) == pytest.approx(abs(y - z))
