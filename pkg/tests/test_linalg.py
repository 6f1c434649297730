import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from glider import linalg
from glider.errors import BadK, BadP, DimMismatch, DimTooSmall, NonFinite, ZeroNorm, ZeroVariance

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def vectors(min_size=2, max_size=12):
    return st.integers(min_size, max_size).flatmap(lambda n: arrays(np.float64, n, elements=finite))


# -- standardize -------------------------------------------------------------


def test_standardize_hand_value():
    out = linalg.standardize([1, 2, 3])
    assert np.allclose(out, [-1.224745, 0.0, 1.224745], atol=1e-6)
    assert out[2] == pytest.approx(1 / math.sqrt(2 / 3), abs=1e-15)


def test_standardize_rejects_constant_and_short():
    with pytest.raises(ZeroVariance):
        linalg.standardize([1, 1, 1])
    with pytest.raises(DimTooSmall):
        linalg.standardize([4.0])
    with pytest.raises(NonFinite):
        linalg.standardize([1.0, np.nan])


@given(st.floats(-1e6, 1e6), st.floats(-1e6, 1e6))
def test_standardize_two_distinct_values(a, b):
    if abs(a - b) < 1e-6:
        return
    out = linalg.standardize([a, b])
    assert abs(out.mean()) < 1e-9
    assert abs(out.std() - 1) < 1e-9


@given(vectors())
def test_standardize_moments(x):
    if np.std(x) < 1e-6:
        return
    out = linalg.standardize(x)
    assert abs(out.mean()) < 1e-9
    assert abs(np.sqrt(np.mean(out**2)) - 1) < 1e-9


def test_standardize_rows_flags_constant_rows():
    out, ok = linalg.standardize_rows(np.array([[1.0, 2, 3], [5, 5, 5]]))
    assert ok.tolist() == [True, False]
    assert np.allclose(out[0], linalg.standardize([1, 2, 3]))
    assert np.all(out[1] == 0)


# -- cosine ------------------------------------------------------------------


def test_cosine_examples():
    assert linalg.cosine_sim([1, 0], [0, 1]) == 0
    assert linalg.cosine_sim([1, 2], [2, 1]) == pytest.approx(0.8, abs=1e-15)
    assert linalg.cosine_sim([3, -4], [3, -4]) == pytest.approx(1.0)
    with pytest.raises(ZeroNorm):
        linalg.cosine_sim([0, 0], [1, 0])
    with pytest.raises(DimMismatch):
        linalg.cosine_sim([1, 0], [1, 0, 0])


@given(vectors(2, 8), st.floats(1e-3, 1e3), st.floats(1e-3, 1e3))
def test_cosine_positive_scale_invariance(x, a, b):
    y = x[::-1].copy()
    if np.linalg.norm(x) < 1e-3:
        return
    c = linalg.cosine_sim(x, y)
    assert -1.0 <= c <= 1.0
    assert linalg.cosine_sim(a * x, b * y) == pytest.approx(c, abs=1e-9)


def test_rowwise_cosine_examples():
    assert np.allclose(linalg.rowwise_cosine(np.eye(2), [1, 0]), [1, 0])
    x = np.array([0.3, -2.0, 1.5])
    assert np.allclose(linalg.rowwise_cosine(np.tile(x, (4, 1)), x), 1.0)
    assert np.allclose(linalg.rowwise_cosine([[1, 2], [2, 1]], [1, 2]), [1.0, 0.8], atol=1e-15)


def test_rowwise_cosine_zero_row_reports_index():
    with pytest.raises(ZeroNorm) as info:
        linalg.rowwise_cosine([[1.0, 0], [0, 0]], [1, 1])
    assert info.value.row == 1


# -- softmax / selection ------------------------------------------------------


def test_softmax_examples():
    assert np.allclose(linalg.softmax([0, 0]), [0.5, 0.5])
    assert np.allclose(linalg.softmax([7, 7, 7]), [1 / 3] * 3)
    assert np.allclose(linalg.softmax([0, math.log(3)]), [0.25, 0.75], atol=1e-15)
    assert np.allclose(linalg.softmax([1000.0, 0.0]), [1.0, 0.0])


@given(vectors(1, 10), st.floats(-1e3, 1e3))
def test_softmax_shift_invariance(s, c):
    p = linalg.softmax(s)
    assert abs(p.sum() - 1) < 1e-12
    assert np.allclose(linalg.softmax(s + c), p, atol=1e-9)
    assert np.allclose(p, oracles.softmax(list(s)), atol=1e-12)


def test_top_k_examples():
    assert set(linalg.top_k_indices([0.1, 0.9, 0.5], 2).tolist()) == {1, 2}
    assert sorted(linalg.top_k_indices([3.0, 1.0, 2.0], 3).tolist()) == [0, 1, 2]
    assert linalg.top_k_indices([5, 5, 1], 1).tolist() == [0]
    with pytest.raises(BadK):
        linalg.top_k_indices([1, 2], 3)
    with pytest.raises(BadK):
        linalg.top_k_indices([1, 2], 0)


@given(st.lists(st.integers(-4000, 4000), min_size=1, max_size=10), st.integers(-4000, 4000), st.integers(1, 10))
def test_top_k_shift_invariance_and_brute_force(raw, c, k):
    # multiples of 1/8 keep the shift exact, so no ties appear by rounding
    s = np.array(raw) / 8.0
    k = min(k, s.size)
    idx = linalg.top_k_indices(s, k)
    assert idx.tolist() == linalg.top_k_indices(s + c / 8.0, k).tolist()
    brute = sorted(range(s.size), key=lambda j: (-s[j], j))[:k]
    assert idx.tolist() == brute


def test_top_p_examples():
    assert linalg.top_p_indices([0.7, 0.2, 0.1], 0.5).tolist() == [0]
    # exactly reaching p does not count as exceeding it
    assert linalg.top_p_indices([0.5, 0.25, 0.25], 0.75).tolist() == [0, 1, 2]
    assert linalg.top_p_indices([0.4, 0.35, 0.25], 0.75).tolist() == [0, 1, 2]
    assert linalg.top_p_indices([0.5, 0.5], 0.5).tolist() == [0, 1]
    with pytest.raises(BadP):
        linalg.top_p_indices([0.5, 0.5], 1.0)


@given(st.lists(st.floats(0.01, 1.0), min_size=1, max_size=8), st.floats(0.01, 0.99))
def test_top_p_is_shortest_prefix_exceeding(raw, p):
    w = np.array(raw) / sum(raw)
    idx = linalg.top_p_indices(w, p)
    assert len(idx) >= 1
    order = np.argsort(-w, kind="stable")
    assert idx.tolist() == order[: len(idx)].tolist()
    if len(idx) < w.size:
        assert w[idx].sum() > p
        assert w[idx[:-1]].sum() <= p


# -- svd_top_right ------------------------------------------------------------


def test_svd_examples():
    s, v = linalg.svd_top_right(np.diag([3.0, 1.0]))
    assert s == pytest.approx(3.0, abs=1e-10)
    assert np.allclose(np.abs(v), [1, 0], atol=1e-9)
    s, v = linalg.svd_top_right(np.array([[1.0, 0], [1, 0]]))
    assert s == pytest.approx(math.sqrt(2), abs=1e-10)
    assert np.allclose(np.abs(v), [1, 0], atol=1e-9)
    with pytest.raises(ZeroNorm):
        linalg.svd_top_right(np.zeros((3, 3)))


def test_svd_deterministic():
    M = np.random.default_rng(3).standard_normal((5, 5))
    a = linalg.svd_top_right(M)
    b = linalg.svd_top_right(M)
    assert a[0] == b[0] and np.array_equal(a[1], b[1])


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 8), st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_svd_matches_jacobi_oracle(d, r, seed):
    rng = np.random.default_rng(seed)
    M = rng.standard_normal((d, r)) @ rng.standard_normal((r, d))
    vals, vecs = oracles.jacobi_eigh(M.T @ M)
    if vals[1] > 0.98 * vals[0]:  # nearly tied top pair: direction ill-defined
        return
    sigma, v = linalg.svd_top_right(M)
    tol = 1e-10
    assert abs(np.linalg.norm(v) - 1) < 1e-12
    assert abs(np.linalg.norm(M @ v) - sigma) < tol * max(1, sigma)
    assert np.linalg.norm(M.T @ M @ v - sigma**2 * v) < 1e-6 * sigma**2
    assert sigma == pytest.approx(math.sqrt(vals[0]), rel=1e-9)
    assert min(np.linalg.norm(v - vecs[:, 0]), np.linalg.norm(v + vecs[:, 0])) < 1e-6
