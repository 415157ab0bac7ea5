import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from corrnet.exceptions import DimensionError, NumericError
from corrnet.tensor import as_tensor, batch_mean_var, check_finite, matmul, rng, seeded_fill

finite = st.floats(-1e3, 1e3, allow_nan=False)


def naive_matmul(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            for k in range(a.shape[1]):
                out[i, j] += a[i, k] * b[k, j]
    return out


@given(st.integers(1, 5), st.integers(1, 5), st.integers(1, 5), st.integers(0, 2**31))
def test_matmul_matches_triple_loop(n, k, p, seed):
    g = rng(seed)
    a, b = g.normal(size=(n, k)), g.normal(size=(k, p))
    np.testing.assert_allclose(matmul(a, b), naive_matmul(a, b), rtol=1e-12, atol=1e-12)


def test_matmul_rejects_bad_shapes():
    with pytest.raises(DimensionError):
        matmul(np.ones((2, 3)), np.ones((2, 3)))
    with pytest.raises(DimensionError):
        matmul(np.ones(3), np.ones((3, 1)))


def test_matmul_overflow_is_numeric_error():
    with pytest.raises(NumericError):
        matmul(np.full((1, 2), 1e308), np.full((2, 1), 1e308))


def test_as_tensor_dtype_and_finiteness():
    t = as_tensor([[1, 2], [3, 4]])
    assert t.dtype == np.float64 and t.flags.c_contiguous
    with pytest.raises(NumericError):
        as_tensor([1.0, np.nan])
    with pytest.raises(NumericError):
        check_finite(np.array([np.inf]))


@given(arrays(np.float64, st.integers(1, 40), elements=finite))
def test_batch_mean_var_is_sum_of_squared_deviations(v):
    mean, ss = batch_mean_var(v)
    assert mean == pytest.approx(np.mean(v), abs=1e-9)
    assert ss == pytest.approx(np.var(v) * len(v), rel=1e-9, abs=1e-6)
    assert ss >= 0


def test_batch_mean_var_constant_and_empty():
    assert batch_mean_var([2.5, 2.5, 2.5]) == (2.5, 0.0)
    with pytest.raises(ValueError):
        batch_mean_var([])


def test_seeded_fill_reproducible_and_distinct():
    a = seeded_fill((4, 5), ("gaussian", 0.0, 1.0), seed=7)
    b = seeded_fill((4, 5), ("gaussian", 0.0, 1.0), seed=7)
    c = seeded_fill((4, 5), ("gaussian", 0.0, 1.0), seed=8)
    assert np.array_equal(a, b) and not np.array_equal(a, c)
    u = seeded_fill((1000,), ("uniform", -2.0, 3.0), seed=1)
    assert u.min() >= -2.0 and u.max() < 3.0


def test_seeded_fill_moments():
    x = seeded_fill((200_000,), ("gaussian", 1.5, 2.0), seed=3)
    assert abs(x.mean() - 1.5) < 0.02 and abs(x.std() - 2.0) < 0.02


def test_seeded_fill_bad_args():
    for dist in (("gaussian", 0, -1), ("uniform", 2, 1), ("cauchy", 0, 1)):
        with pytest.raises(ValueError):
            seeded_fill((2,), dist, 0)
