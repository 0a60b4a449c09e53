"""Hot loops with a numba path and a pure-numpy path.

Set ``MEANFLOW_NO_NUMBA=1`` to force the numpy implementations (also used
automatically when numba is not importable). Both variants are always
importable as ``*_numba`` / ``*_numpy`` so the benchmark can compare them.
"""

from __future__ import annotations

import math
import os

import numpy as np

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("MEANFLOW_NO_NUMBA", "0").lower() not in ("1", "true", "yes")

_CHUNK = 512


def _njit(fn):
    if not HAVE_NUMBA:
        return fn
    return numba.njit(cache=True, fastmath=False)(fn)


def _njit_fast(fn):
    if not HAVE_NUMBA:
        return fn
    return numba.njit(cache=True, fastmath=True)(fn)


# -- mean pairwise euclidean distance ------------------------------------------


@_njit
def _mean_pairwise_distance_nb(A, B):
    n, d = A.shape
    m = B.shape[0]
    total = 0.0
    for i in range(n):
        row = 0.0
        for j in range(m):
            s = 0.0
            for k in range(d):
                diff = A[i, k] - B[j, k]
                s += diff * diff
            row += math.sqrt(s)
        total += row
    return total / (n * m)


def mean_pairwise_distance_numpy(A: np.ndarray, B: np.ndarray) -> float:
    total = 0.0
    for i in range(0, A.shape[0], _CHUNK):
        a = A[i:i + _CHUNK]
        diff = a[:, None, :] - B[None, :, :]
        total += np.sqrt((diff * diff).sum(axis=-1)).sum()
    return total / (A.shape[0] * B.shape[0])


def mean_pairwise_distance_numba(A: np.ndarray, B: np.ndarray) -> float:
    return float(_mean_pairwise_distance_nb(np.ascontiguousarray(A, np.float64),
                                            np.ascontiguousarray(B, np.float64)))


# -- 2d histogram --------------------------------------------------------------


@_njit
def _hist2d_nb(X, lo0, hi0, lo1, hi1, nbins):
    counts = np.zeros((nbins, nbins))
    w0 = (hi0 - lo0) / nbins
    w1 = (hi1 - lo1) / nbins
    for i in range(X.shape[0]):
        x, y = X[i, 0], X[i, 1]
        if x < lo0 or x > hi0 or y < lo1 or y > hi1:
            continue
        a = int((x - lo0) / w0)
        b = int((y - lo1) / w1)
        if a == nbins:
            a -= 1
        if b == nbins:
            b -= 1
        counts[a, b] += 1.0
    return counts


def hist2d_numpy(X, lo0, hi0, lo1, hi1, nbins) -> np.ndarray:
    counts, _, _ = np.histogram2d(X[:, 0], X[:, 1], bins=nbins, range=[[lo0, hi0], [lo1, hi1]])
    return counts


def hist2d_numba(X, lo0, hi0, lo1, hi1, nbins) -> np.ndarray:
    return _hist2d_nb(np.ascontiguousarray(X, np.float64), float(lo0), float(hi0),
                      float(lo1), float(hi1), int(nbins))


# -- fused SiLU ----------------------------------------------------------------


@_njit_fast
def _silu_nb(x):
    flat = x.ravel()
    y = np.empty_like(flat)
    dy = np.empty_like(flat)
    for i in range(flat.size):
        xi = flat[i]
        # exp overflow for xi << 0 gives s = 0, the correct limit
        s = 1.0 / (1.0 + math.exp(-xi))
        y[i] = xi * s
        dy[i] = s * (1.0 + xi * (1.0 - s))
    return y.reshape(x.shape), dy.reshape(x.shape)


def silu_numpy(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """SiLU and its derivative in one call."""
    with np.errstate(over="ignore"):
        s = 1.0 / (1.0 + np.exp(-x))
    return x * s, s * (1.0 + x * (1.0 - s))


def silu_numba(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return _silu_nb(np.ascontiguousarray(x))


# -- fused AdamW ---------------------------------------------------------------


@_njit
def _adamw_nb(p, g, m, v, lr, b1, b2, eps, wd, bc1, bc2):
    fp = p.ravel()
    fg = g.ravel()
    fm = m.ravel()
    fv = v.ravel()
    for i in range(fp.size):
        gi = fg[i]
        fm[i] = b1 * fm[i] + (1.0 - b1) * gi
        fv[i] = b2 * fv[i] + (1.0 - b2) * gi * gi
        mhat = fm[i] / bc1
        vhat = fv[i] / bc2
        fp[i] = fp[i] - lr * (mhat / (math.sqrt(vhat) + eps) + wd * fp[i])


def adamw_numpy(p, g, m, v, lr, b1, b2, eps, wd, bc1, bc2) -> None:
    m *= b1
    m += (1.0 - b1) * g
    v *= b2
    v += (1.0 - b2) * g * g
    mhat = m / bc1
    vhat = v / bc2
    p -= lr * (mhat / (np.sqrt(vhat) + eps) + wd * p)


def adamw_numba(p, g, m, v, lr, b1, b2, eps, wd, bc1, bc2) -> None:
    _adamw_nb(p, np.ascontiguousarray(g), m, v, lr, b1, b2, eps, wd, bc1, bc2)


if USE_NUMBA:
    mean_pairwise_distance = mean_pairwise_distance_numba
    hist2d = hist2d_numba
    adamw_inplace = adamw_numba
else:
    mean_pairwise_distance = mean_pairwise_distance_numpy
    hist2d = hist2d_numpy
    adamw_inplace = adamw_numpy

# numpy's vectorised exp beats the scalar numba loop at network sizes
# (benchmarks/bench_kernels.py), so SiLU uses numpy on both backends.
silu = silu_numpy

BACKEND = "numba" if USE_NUMBA else "numpy"
