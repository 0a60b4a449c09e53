import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from meanflow_lab import _kernels as K

needs_numba = pytest.mark.skipif(not K.HAVE_NUMBA, reason="numba not installed")


def brute_mpd(A, B):
    return sum(np.linalg.norm(a - b) for a in A for b in B) / (len(A) * len(B))


def test_backend_flag_matches_dispatch():
    expected = "numba" if K.USE_NUMBA else "numpy"
    assert K.BACKEND == expected
    assert K.mean_pairwise_distance is getattr(K, f"mean_pairwise_distance_{expected}")


@pytest.mark.parametrize("impl", [K.mean_pairwise_distance_numpy, pytest.param(K.mean_pairwise_distance_numba,
                                                                               marks=needs_numba)])
def test_mean_pairwise_distance_against_brute_force(impl):
    rng = np.random.default_rng(0)
    A, B = rng.normal(size=(37, 2)), rng.normal(size=(23, 2))
    assert impl(A, B) == pytest.approx(brute_mpd(A, B), rel=1e-12)


def test_mean_pairwise_distance_chunks():
    rng = np.random.default_rng(1)
    A, B = rng.normal(size=(1100, 2)), rng.normal(size=(40, 2))
    full = np.sqrt(((A[:, None] - B[None]) ** 2).sum(-1)).mean()
    assert K.mean_pairwise_distance_numpy(A, B) == pytest.approx(full, rel=1e-12)


@needs_numba
@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_histogram_backends_agree(seed):
    X = np.random.default_rng(seed).normal(scale=2.0, size=(500, 2))
    a = K.hist2d_numpy(X, -4.0, 4.0, -3.0, 3.0, 12)
    b = K.hist2d_numba(X, -4.0, 4.0, -3.0, 3.0, 12)
    assert np.array_equal(a, b)


@needs_numba
def test_histogram_upper_edge_is_inclusive():
    X = np.array([[1.0, 1.0], [-1.0, -1.0], [1.5, 0.0]])
    for impl in (K.hist2d_numpy, K.hist2d_numba):
        h = impl(X, -1.0, 1.0, -1.0, 1.0, 2)
        assert h.tolist() == [[1.0, 0.0], [0.0, 1.0]]


@needs_numba
def test_silu_backends_agree():
    x = np.random.default_rng(2).normal(scale=5.0, size=(64, 33))
    x[0, :4] = [-800.0, 800.0, 0.0, -40.0]
    y0, d0 = K.silu_numpy(x)
    y1, d1 = K.silu_numba(x)
    np.testing.assert_allclose(y1, y0, rtol=1e-14, atol=1e-300)
    np.testing.assert_allclose(d1, d0, rtol=1e-13, atol=1e-300)
    assert y0[0, 0] == 0.0 and y0[0, 1] == 800.0


@needs_numba
def test_adamw_backends_agree():
    rng = np.random.default_rng(3)
    args = []
    for impl in (K.adamw_numpy, K.adamw_numba):
        p, m, v = rng.normal(size=(8, 5)), np.zeros((8, 5)), np.zeros((8, 5))
        args.append((impl, p, m, v))
    args[1] = (args[1][0], args[0][1].copy(), np.zeros((8, 5)), np.zeros((8, 5)))
    g = rng.normal(size=(8, 5))
    for impl, p, m, v in args:
        impl(p, g, m, v, 0.01, 0.9, 0.95, 1e-8, 1e-3, 0.1, 0.05)
    np.testing.assert_allclose(args[0][1], args[1][1], rtol=1e-14)
    np.testing.assert_allclose(args[0][3], args[1][3], rtol=1e-14)
