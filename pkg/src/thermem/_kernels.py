"""Hot per-step recursions: rollout, steady-gain filter, steady-gain smoother.

Each kernel exists twice: a numba @njit build with preallocated buffers and
in-place matvecs, and a vectorized plain-numpy build of the same recursion.
The njit build is used when numba imported successfully and the environment
variable THERMEM_DISABLE_NUMBA is unset/empty; tests and the benchmark call
both builds directly. The input contribution B @ P[t] is hoisted out of all
loops as one matrix product.
"""

from __future__ import annotations

import os

import numpy as np

NUMBA_ENV_FLAG = "THERMEM_DISABLE_NUMBA"

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency in CI
    HAVE_NUMBA = False


def numba_enabled() -> bool:
    return HAVE_NUMBA and not os.environ.get(NUMBA_ENV_FLAG)


# ---------------------------------------------------------------------------
# numpy builds


def _rollout_np(A, BP, T1):
    N = BP.shape[0] + 1
    T = np.empty((N, T1.shape[0]))
    T[0] = T1
    for t in range(N - 1):
        T[t + 1] = A @ T[t] + BP[t]
    return T


def _filter_steady_np(A, BP, C, K, x1, Y):
    N = Y.shape[0]
    xf = np.empty((N, x1.shape[0]))
    innov = np.empty((N - 1, C.shape[0]))
    xf[0] = x1
    for t in range(N - 1):
        xp = A @ xf[t] + BP[t]
        e = Y[t + 1] - C @ xp
        innov[t] = e
        xf[t + 1] = xp + K @ e
    return xf, innov


def _smooth_steady_np(A, BP, J, Xf):
    N = Xf.shape[0]
    xs = np.empty_like(Xf)
    xs[N - 1] = Xf[N - 1]
    for t in range(N - 2, -1, -1):
        xp = A @ Xf[t] + BP[t]
        xs[t] = Xf[t] + J @ (xs[t + 1] - xp)
    return xs


# ---------------------------------------------------------------------------
# numba builds (buffered in-place loops)


def _rollout_buf(A, BP, T1):
    N = BP.shape[0] + 1
    n = T1.shape[0]
    T = np.empty((N, n))
    T[0] = T1
    for t in range(N - 1):
        np.dot(A, T[t], T[t + 1])
        for i in range(n):
            T[t + 1, i] += BP[t, i]
    return T


def _filter_steady_buf(A, BP, C, K, x1, Y):
    N = Y.shape[0]
    n = x1.shape[0]
    n_y = C.shape[0]
    xf = np.empty((N, n))
    innov = np.empty((N - 1, n_y))
    xp = np.empty(n)
    cp = np.empty(n_y)
    ke = np.empty(n)
    xf[0] = x1
    for t in range(N - 1):
        np.dot(A, xf[t], xp)
        for i in range(n):
            xp[i] += BP[t, i]
        np.dot(C, xp, cp)
        for j in range(n_y):
            innov[t, j] = Y[t + 1, j] - cp[j]
        np.dot(K, innov[t], ke)
        for i in range(n):
            xf[t + 1, i] = xp[i] + ke[i]
    return xf, innov


def _smooth_steady_buf(A, BP, J, Xf):
    N, n = Xf.shape
    xs = np.empty_like(Xf)
    xs[N - 1] = Xf[N - 1]
    xp = np.empty(n)
    d = np.empty(n)
    jd = np.empty(n)
    for t in range(N - 2, -1, -1):
        np.dot(A, Xf[t], xp)
        for i in range(n):
            d[i] = xs[t + 1, i] - (xp[i] + BP[t, i])
        np.dot(J, d, jd)
        for i in range(n):
            xs[t, i] = Xf[t, i] + jd[i]
    return xs


if HAVE_NUMBA:
    _rollout_nb = njit(cache=True)(_rollout_buf)
    _filter_steady_nb = njit(cache=True)(_filter_steady_buf)
    _smooth_steady_nb = njit(cache=True)(_smooth_steady_buf)


def _c64(x):
    return np.ascontiguousarray(np.asarray(x, dtype=np.float64))


def _input_drive(B, P, W=None):
    """Per-step state-side drive BP[t] = B @ P[t] (+ W[t]) as one product."""
    BP = _c64(P) @ _c64(B).T
    if W is not None:
        BP = BP + _c64(W)
    return np.ascontiguousarray(BP)


def rollout(A, B, T1, P, W=None):
    """T[t+1] = A T[t] + B P[t] (+ W[t]); T[0] = T1. P has N-1 rows here."""
    A, T1 = _c64(A), _c64(T1)
    BP = _input_drive(B, P, W)
    if numba_enabled():
        return _rollout_nb(A, BP, T1)
    return _rollout_np(A, BP, T1)


def filter_steady(A, B, C, K, x1, P, Y):
    A, C, K, x1, Y = map(_c64, (A, C, K, x1, Y))
    BP = _input_drive(B, P)
    if numba_enabled():
        return _filter_steady_nb(A, BP, C, K, x1, Y)
    return _filter_steady_np(A, BP, C, K, x1, Y)


def smooth_steady(A, B, J, Xf, P):
    A, J, Xf = map(_c64, (A, J, Xf))
    BP = _input_drive(B, P)
    if numba_enabled():
        return _smooth_steady_nb(A, BP, J, Xf)
    return _smooth_steady_np(A, BP, J, Xf)
