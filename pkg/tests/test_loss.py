import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from housing_abm.loss import (
    EmptySeries, InvalidPath, LengthMismatch, combined_loss, dtw, tdi, validate_path,
)


def all_paths(n, m):
    """Every monotone warping path from (0, 0) to (n-1, m-1)."""
    if (n, m) == (1, 1):
        yield [(0, 0)]
        return

    def walk(i, j):
        if (i, j) == (n - 1, m - 1):
            yield [(i, j)]
            return
        for di, dj in ((1, 1), (1, 0), (0, 1)):
            a, b = i + di, j + dj
            if a < n and b < m:
                for rest in walk(a, b):
                    yield [(i, j)] + rest

    yield from walk(0, 0)


def brute_dtw(x, y):
    return min(sum(abs(x[i] - y[j]) for i, j in p) for p in all_paths(len(x), len(y)))


def test_identical_series_zero():
    cost, path = dtw([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
    assert cost == 0
    assert path == [(0, 0), (1, 1), (2, 2)]


def test_small_example():
    # optimal alignment maps both 1s in x to the single 1 in y
    cost, path = dtw([0.0, 1.0, 1.0, 2.0], [0.0, 1.0, 2.0, 2.0])
    assert cost == 0
    validate_path(path, 4)


def test_length_one():
    cost, path = dtw([3.0], [5.0, 1.0])
    assert cost == 2 + 2
    assert path == [(0, 0), (0, 1)]


def test_empty_rejected():
    with pytest.raises(EmptySeries):
        dtw([], [1.0])


def test_tdi_of_one_step_detour():
    # the path leaves the diagonal for a single unit triangle of area 0.5
    assert tdi([(0, 0), (1, 0), (1, 1)], 2) == pytest.approx(0.25, abs=1e-15)


def test_tdi_identity_zero():
    assert tdi([(i, i) for i in range(5)], 5) == 0.0


@pytest.mark.parametrize("n", [2, 3, 5, 8])
def test_tdi_extreme_staircase(n):
    path = [(i, 0) for i in range(n)] + [(n - 1, j) for j in range(1, n)]
    # triangle between the L-shaped path and the diagonal has area (n-1)^2 / 2
    assert tdi(path, n) == pytest.approx((n - 1) ** 2 / n**2, abs=1e-15)


def test_tdi_rejects_bad_path():
    with pytest.raises(InvalidPath):
        tdi([(0, 0), (2, 2)], 3)
    with pytest.raises(InvalidPath):
        tdi([(0, 1), (1, 1)], 2)


def test_combined_length_mismatch():
    with pytest.raises(LengthMismatch):
        combined_loss([1.0, 2.0], [1.0])


def test_combined_is_weighted_sum():
    x = [1.0, 3.0, 2.0, 5.0]
    y = [1.0, 2.0, 4.0, 4.0]
    rep = combined_loss(x, y, lam=0.3)
    assert rep.combined == pytest.approx(0.3 * rep.shape + 0.7 * rep.temporal)
    assert rep.shape == brute_dtw(x, y)


def test_timing_term_penalises_shifted_peak():
    base = np.array([0, 0, 1, 5, 1, 0, 0, 0, 0, 0], dtype=float)
    shifted = np.roll(base, 4)
    flat = np.zeros_like(base)
    near = combined_loss(base, shifted, lam=0.5)
    far = combined_loss(base, flat, lam=0.5)
    # warping removes the shape gap of the shifted peak
    assert near.shape < far.shape
    # the price of that alignment is visible timing distortion
    assert near.temporal > 0 and far.temporal == 0


@settings(max_examples=300, deadline=None)
@given(
    st.lists(st.integers(-50, 50), min_size=1, max_size=6),
    st.lists(st.integers(-50, 50), min_size=1, max_size=6),
)
def test_dtw_matches_enumeration(x, y):
    cost, path = dtw(x, y)
    assert cost == brute_dtw(x, y)
    validate_path(path, len(x), len(y))
    assert sum(abs(x[i] - y[j]) for i, j in path) == cost


small_floats = st.floats(-1e3, 1e3, allow_nan=False)


@settings(max_examples=200, deadline=None)
@given(st.lists(small_floats, min_size=1, max_size=10), st.lists(small_floats, min_size=1, max_size=10))
def test_dtw_symmetric(x, y):
    assert dtw(x, y)[0] == pytest.approx(dtw(y, x)[0], rel=1e-12, abs=1e-9)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(-100, 100), min_size=2, max_size=10).flatmap(
    lambda x: st.tuples(st.just(x), st.lists(st.integers(-100, 100), min_size=len(x), max_size=len(x)))))
def test_scaling_values_keeps_path(case):
    x, y = case
    rep = combined_loss(x, y)
    big = combined_loss([4 * v for v in x], [4 * v for v in y])
    assert big.shape == 4 * rep.shape
    assert big.path == rep.path
    assert big.temporal == rep.temporal
    assert 0.0 <= rep.temporal <= 1.0


def test_all_paths_counts_delannoy():
    # central Delannoy numbers count monotone king paths
    assert [sum(1 for _ in all_paths(n, n)) for n in range(1, 5)] == [1, 3, 13, 63]
    assert len(list(itertools.islice(all_paths(3, 2), 100))) == 5
