"""Compiled inner loops for the sequential SGD updates.

Features are stored sparsely as ``(idx, val)`` arrays with a fixed number of
slots per row.  Each kernel returns the number of updates completed; fewer
than requested means a weight left ``[-limit, limit]`` (or became non-finite)
at the returned step.  With ``track_env`` set, ``lo``/``hi`` keep the
per-coordinate extremes of every post-update iterate.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def frozen_pass(w, idx, val, y, order, eta, limit, buf_sum, track_buf, tot_sum, track_tot, lo, hi, track_env):
    """Regression updates ``w += eta (y_p - <phi_p, w>) phi_p`` along ``order`` (0-based rows)."""
    nnz = idx.shape[1]
    d = w.shape[0]
    for step in range(order.shape[0]):
        p = order[step]
        q = 0.0
        for m in range(nnz):
            q += w[idx[p, m]] * val[p, m]
        g = eta * (y[p] - q)
        bad = False
        for m in range(nnz):
            k = idx[p, m]
            w[k] += g * val[p, m]
            if not (abs(w[k]) <= limit):
                bad = True
            if track_env:
                lo[k] = min(lo[k], w[k])
                hi[k] = max(hi[k], w[k])
        if bad:
            return step
        if track_buf:
            for i in range(d):
                buf_sum[i] += w[i]
        if track_tot:
            for i in range(d):
                tot_sum[i] += w[i]
    return order.shape[0]


@njit(cache=True)
def live_pass(w, idx, val, r, nidx, nval, nterm, gamma, order, eta, limit,
              buf_sum, track_buf, tot_sum, track_tot, lo, hi, track_env):
    """Q-learning updates bootstrapping from the current iterate itself."""
    nnz = idx.shape[1]
    A = nidx.shape[1]
    d = w.shape[0]
    for step in range(order.shape[0]):
        p = order[step]
        boot = 0.0
        if not nterm[p]:
            boot = -np.inf
            for a in range(A):
                qa = 0.0
                for m in range(nnz):
                    qa += w[nidx[p, a, m]] * nval[p, a, m]
                if qa > boot:
                    boot = qa
        q = 0.0
        for m in range(nnz):
            q += w[idx[p, m]] * val[p, m]
        g = eta * (r[p] + gamma * boot - q)
        bad = False
        for m in range(nnz):
            k = idx[p, m]
            w[k] += g * val[p, m]
            if not (abs(w[k]) <= limit):
                bad = True
            if track_env:
                lo[k] = min(lo[k], w[k])
                hi[k] = max(hi[k], w[k])
        if bad:
            return step
        if track_buf:
            for i in range(d):
                buf_sum[i] += w[i]
        if track_tot:
            for i in range(d):
                tot_sum[i] += w[i]
    return order.shape[0]


@njit(cache=True)
def bootstrap(target, nidx, nval, nterm, out):
    """``out[p] = max_a <phi(s'_p, a), target>``, or 0 where ``s'_p`` is terminal."""
    A = nidx.shape[1]
    nnz = nidx.shape[2]
    for p in range(nidx.shape[0]):
        if nterm[p]:
            out[p] = 0.0
            continue
        best = -np.inf
        for a in range(A):
            q = 0.0
            for m in range(nnz):
                q += target[nidx[p, a, m]] * nval[p, a, m]
            if q > best:
                best = q
        out[p] = best
