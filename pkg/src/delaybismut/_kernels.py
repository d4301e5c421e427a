"""Compiled inner loops for the step recursions.

The recursions are sequential in time and touch only a few numbers per
path and step, so numpy spends most of its time in call overhead; these
loops run per path instead.  Drift taps are packed as ``(lags, mats, diag,
nl)``: step lag, a full d x d coefficient, whether it is diagonal, and
whether it acts on sat(x) rather than x.
"""

from __future__ import annotations

import numpy as np
from numba import njit


def pack_taps(taps, d: int):
    n = len(taps)
    lags = np.zeros(n, dtype=np.int64)
    mats = np.zeros((n, d, d))
    diag = np.zeros(n, dtype=np.bool_)
    nl = np.zeros(n, dtype=np.bool_)
    for t, (lag, coef, nonlinear) in enumerate(taps):
        lags[t] = lag
        nl[t] = nonlinear
        if np.ndim(coef) == 2:
            mats[t] = coef
        else:
            mats[t] = np.diag(np.broadcast_to(np.asarray(coef, dtype=float), (d,)))
            diag[t] = True
    return lags, mats, diag, nl


_EMPTY3 = np.zeros((1, 1, 1))
_EMPTY1 = np.zeros(1)


@njit(cache=True, nogil=True)
def _drift_into(acc, src, lin_src, i, p, lags, mats, diag, nl, use_dsat):
    """acc += sum over taps of coef . (nl ? g(src) : src) at node i - lag.

    With ``use_dsat`` the nonlinear factor is 1 - s^2 (s = lin_src) times
    src; otherwise it is lin_src itself (the cached sat values).
    """
    d = acc.shape[0]
    for t in range(lags.shape[0]):
        r = i - lags[t]
        if diag[t]:
            for j in range(d):
                if nl[t]:
                    if use_dsat:
                        s = lin_src[r, p, j]
                        v = (1.0 - s * s) * src[r, p, j]
                    else:
                        v = lin_src[r, p, j]
                else:
                    v = src[r, p, j]
                acc[j] += mats[t, j, j] * v
        else:
            for j in range(d):
                tot = 0.0
                for l in range(d):
                    if nl[t]:
                        if use_dsat:
                            s = lin_src[r, p, l]
                            v = (1.0 - s * s) * src[r, p, l]
                        else:
                            v = lin_src[r, p, l]
                    else:
                        v = src[r, p, l]
                    tot += mats[t, j, l] * v
                acc[j] += tot


@njit(cache=True, nogil=True)
def mild_steps(X, satX, need_sat, dW, extra, has_extra, eA, lags, mats, diag, nl, dt, m, K, sig_const, S, s0, s1):
    """X[m+k+1] = eA * (X[m+k] + F dt + sigma(X[m+k]) (dW_k + extra_k)) in place."""
    L, n, d = X.shape
    if need_sat:
        for i in range(m + 1):
            for p in range(n):
                for j in range(d):
                    satX[i, p, j] = np.tanh(X[i, p, j])
    acc = np.empty(d)
    nz = np.empty(d)
    for k in range(K):
        i = m + k
        for p in range(n):
            for j in range(d):
                acc[j] = 0.0
            _drift_into(acc, X, satX, i, p, lags, mats, diag, nl, False)
            for j in range(d):
                if has_extra:
                    nz[j] = dW[k, p, j] + extra[k, p, j]
                else:
                    nz[j] = dW[k, p, j]
            for j in range(d):
                if sig_const:
                    s = 0.0
                    for l in range(d):
                        s += S[j, l] * nz[l]
                else:
                    s = (s0[j] + s1[j] * satX[i, p, j]) * nz[j]
                val = eA[j] * (X[i, p, j] + acc[j] * dt + s)
                X[i + 1, p, j] = val
                if need_sat:
                    satX[i + 1, p, j] = np.tanh(val)


@njit(cache=True, nogil=True)
def linear_steps(Y, satX, dW, eA, lags, mats, diag, nl, dt, m, stop, has_gain, s1, forcing, has_forcing, damping, has_damping):
    """Y[m+k+1] = rho_k eA [Y + gradF[Y] dt + (grad_Y sigma) dW_k + forcing_k dt] in place."""
    L, n, d = Y.shape
    acc = np.empty(d)
    for k in range(stop):
        i = m + k
        for p in range(n):
            for j in range(d):
                acc[j] = 0.0
            _drift_into(acc, Y, satX, i, p, lags, mats, diag, nl, True)
            for j in range(d):
                val = Y[i, p, j] + acc[j] * dt
                if has_gain:
                    s = satX[i, p, j]
                    val += s1[j] * (1.0 - s * s) * dW[k, p, j] * Y[i, p, j]
                if has_forcing:
                    val += forcing[k, p, j] * dt
                val = eA[j] * val
                if has_damping:
                    val = damping[k] * val
                Y[i + 1, p, j] = val
