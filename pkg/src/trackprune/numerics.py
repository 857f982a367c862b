"""Dense float64 kernels with fixed, platform-independent semantics.

Matrices are plain 2-D ``numpy.ndarray`` objects of dtype float64. Every
function here is pure: inputs are never modified.
"""

from __future__ import annotations

import math
from fractions import Fraction
from typing import Sequence

import numba
import numpy as np

ROUNDING_MODES = ("floor", "round", "ceil")


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    """Return ``x`` as a C-contiguous float64 2-D array (widening float32)."""
    m = np.ascontiguousarray(x, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} contains non-finite entries")
    return m


@numba.njit(cache=True)
def _matmul_ordered(a, b):
    n, k = a.shape
    m = b.shape[1]
    out = np.zeros((n, m))
    # i-p-j loop: each out[i, j] accumulates over p strictly left to right
    for i in range(n):
        for p in range(k):
            aip = a[i, p]
            for j in range(m):
                out[i, j] += aip * b[p, j]
    return out


def matmul(a, b) -> np.ndarray:
    """Matrix product with a fixed left-to-right accumulation order.

    ``out[i, j]`` is ``((a[i,0]*b[0,j] + a[i,1]*b[1,j]) + ...)`` evaluated
    in that order without fused multiply-add, so results are bit-identical
    across runs and platforms (unlike a threaded BLAS call).
    """
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return _matmul_ordered(a, b)


def softmax_rows(m) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if m.ndim == 1:
        m = m[None, :]
    shifted = m - m.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def topk_indices(scores: Sequence[float], k: int) -> np.ndarray:
    """Indices of the ``k`` largest scores, returned in ascending order.

    Selection is by (score descending, index ascending), so among equal
    scores the earlier token wins.
    """
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 1:
        raise ValueError("scores must be 1-D")
    if np.isnan(s).any():
        raise ValueError("scores contain NaN")
    n = s.shape[0]
    if not 0 <= k <= n:
        raise ValueError(f"k={k} out of range for {n} scores")
    order = np.lexsort((np.arange(n), -s))
    return np.sort(order[:k])


def hann_window(n: int) -> np.ndarray:
    if n < 1:
        raise ValueError("hann window length must be >= 1")
    if n == 1:
        return np.ones(1)
    i = np.arange(n, dtype=np.float64)
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * i / (n - 1)))


def exact_ratio(ratio: float) -> Fraction:
    """Decimal value of ``ratio`` as written, e.g. 0.55 -> 11/20.

    Using the binary float directly would make ``ceil(0.55 * 20)`` equal 12.
    """
    return Fraction(repr(float(ratio)))


def keep_count(n: int, ratio: float, rounding: str = "ceil") -> int:
    """Number of tokens kept when ``n`` tokens are pruned at ``ratio``."""
    if not 0.0 < ratio <= 1.0:
        raise ValueError(f"keep ratio must be in (0, 1], got {ratio}")
    x = exact_ratio(ratio) * n
    if rounding == "ceil":
        k = math.ceil(x)
    elif rounding == "floor":
        k = math.floor(x)
    elif rounding == "round":
        k = math.floor(x + Fraction(1, 2))
    else:
        raise ValueError(f"unknown rounding mode {rounding!r}")
    return k
