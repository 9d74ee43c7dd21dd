"""Numeric kernels for the per-round hot loop.

Two interchangeable implementations live here: explicit-loop versions
compiled with numba, and vectorized numpy versions. The active backend
is chosen once at import time from the ``OFD_NUMBA`` environment
variable (any of ``0/false/off/no`` selects numpy; default is numba
when importable). Both families are importable side by side so the
benchmark can time them against each other.

All kernels operate on float64 arrays. The rank-one update mutates its
matrix arguments in place and uses symmetric writes, so a symmetric
input stays exactly symmetric.
"""

from __future__ import annotations

import math
import os

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(func):
            return func

        if args and callable(args[0]):
            return args[0]
        return wrap


# ---------------------------------------------------------------------------
# numpy implementations


def _rank_one_update_numpy(m_mat: np.ndarray, m_inv: np.ndarray, v: np.ndarray) -> float:
    """Apply M += v v^T and the matching Sherman-Morrison inverse update.

    Returns log(1 + v^T M^-1 v), the log-determinant increment.
    """
    z = m_inv @ v
    denom = 1.0 + float(v @ z)
    m_mat += np.outer(v, v)
    m_inv -= np.outer(z, z) / denom
    # re-symmetrize to stop round-off drift from accumulating
    m_inv[:] = 0.5 * (m_inv + m_inv.T)
    return math.log(denom)


def _quad_form_numpy(m_inv: np.ndarray, x: np.ndarray) -> float:
    return float(x @ m_inv @ x)


def _batch_quad_form_numpy(m_inv: np.ndarray, xs: np.ndarray) -> np.ndarray:
    return np.sum((xs @ m_inv) * xs, axis=1)


def _weighted_sorted_sum_numpy(weights: np.ndarray, u: np.ndarray) -> float:
    return float(np.sort(u) @ weights)


def _gini_candidates_numpy(weights: np.ndarray, totals: np.ndarray, adds: np.ndarray) -> np.ndarray:
    n = totals.size
    mat = np.tile(totals, (n, 1))
    mat[np.arange(n), np.arange(n)] += adds
    mat.sort(axis=1)
    return mat @ weights


# ---------------------------------------------------------------------------
# loop implementations, compiled with numba when the backend is active


def _rank_one_update_loops(m_mat, m_inv, v):
    d = v.size
    z = np.empty(d)
    for i in range(d):
        acc = 0.0
        for j in range(d):
            acc += m_inv[i, j] * v[j]
        z[i] = acc
    vz = 0.0
    for i in range(d):
        vz += v[i] * z[i]
    denom = 1.0 + vz
    for i in range(d):
        for j in range(i, d):
            m_mat[i, j] += v[i] * v[j]
            new = m_inv[i, j] - z[i] * z[j] / denom
            m_inv[i, j] = new
            if j != i:
                m_mat[j, i] = m_mat[i, j]
                m_inv[j, i] = new
    return np.log(denom)


def _quad_form_loops(m_inv, x):
    d = x.size
    acc = 0.0
    for i in range(d):
        zi = 0.0
        for j in range(d):
            zi += m_inv[i, j] * x[j]
        acc += zi * x[i]
    return acc


def _batch_quad_form_loops(m_inv, xs):
    n, d = xs.shape
    out = np.empty(n)
    for r in range(n):
        acc = 0.0
        for i in range(d):
            zi = 0.0
            for j in range(d):
                zi += m_inv[i, j] * xs[r, j]
            acc += zi * xs[r, i]
        out[r] = acc
    return out


def _weighted_sorted_sum_loops(weights, u):
    v = u.copy()
    v.sort()
    acc = 0.0
    for k in range(v.size):
        acc += weights[k] * v[k]
    return acc


def _gini_candidates_loops(weights, totals, adds):
    n = totals.size
    out = np.empty(n)
    buf = np.empty(n)
    for c in range(n):
        for i in range(n):
            buf[i] = totals[i]
        buf[c] += adds[c]
        buf.sort()
        acc = 0.0
        for k in range(n):
            acc += weights[k] * buf[k]
        out[c] = acc
    return out


NUMPY_IMPLS = {
    "rank_one_update": _rank_one_update_numpy,
    "quad_form": _quad_form_numpy,
    "batch_quad_form": _batch_quad_form_numpy,
    "weighted_sorted_sum": _weighted_sorted_sum_numpy,
    "gini_candidates": _gini_candidates_numpy,
}

_numba_impls: dict | None = None


def numba_impls() -> dict:
    """Compile (once) and return the numba kernel family.

    Raises ImportError when numba is unavailable.
    """
    global _numba_impls
    if not HAVE_NUMBA:
        raise ImportError("numba is not installed")
    if _numba_impls is None:
        jit = njit(cache=True)
        _numba_impls = {
            "rank_one_update": jit(_rank_one_update_loops),
            "quad_form": jit(_quad_form_loops),
            "batch_quad_form": jit(_batch_quad_form_loops),
            "weighted_sorted_sum": jit(_weighted_sorted_sum_loops),
            "gini_candidates": jit(_gini_candidates_loops),
        }
    return _numba_impls


def _want_numba() -> bool:
    flag = os.environ.get("OFD_NUMBA", "").strip().lower()
    return flag not in {"0", "false", "off", "no"}


if HAVE_NUMBA and _want_numba():
    _active = numba_impls()
    BACKEND = "numba"
else:
    _active = NUMPY_IMPLS
    BACKEND = "numpy"

rank_one_update = _active["rank_one_update"]
quad_form = _active["quad_form"]
batch_quad_form = _active["batch_quad_form"]
weighted_sorted_sum = _active["weighted_sorted_sum"]
gini_candidates = _active["gini_candidates"]
