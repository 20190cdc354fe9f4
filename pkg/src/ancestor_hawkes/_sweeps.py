"""Compiled inner loops for the branching updates.

Children of each event are kept in doubly linked lists (``head``/``nxt``/``prv``)
so that moving an event between parents is O(1) during the reverse-time sweep.
All random input arrives as pre-drawn uniforms, keeping the numpy Generator the
single source of randomness.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

NEG_INF = -np.inf


@njit(cache=True)
def build_links(parents, n):
    head = np.full(n, -1, np.int64)
    nxt = np.full(n, -1, np.int64)
    prv = np.full(n, -1, np.int64)
    for c in range(n - 1, -1, -1):
        p = parents[c]
        if p >= 0:
            h = head[p]
            nxt[c] = h
            if h >= 0:
                prv[h] = c
            head[p] = c
    return head, nxt, prv


@njit(cache=True)
def _unlink(c, p, head, nxt, prv):
    a, b = prv[c], nxt[c]
    if a >= 0:
        nxt[a] = b
    else:
        head[p] = b
    if b >= 0:
        prv[b] = a
    prv[c] = -1
    nxt[c] = -1


@njit(cache=True)
def _link(c, p, head, nxt, prv):
    h = head[p]
    nxt[c] = h
    prv[c] = -1
    if h >= 0:
        prv[h] = c
    head[p] = c


@njit(cache=True)
def _edge_tables(log_eta, rate):
    """log(eta * rate) per source/target pair, -inf where eta is zero."""
    out = np.empty_like(rate)
    for a in range(rate.shape[0]):
        for b in range(rate.shape[1]):
            out[a, b] = NEG_INF if log_eta[a, b] == NEG_INF else log_eta[a, b] + math.log(rate[a, b])
    return out


@njit(cache=True)
def _log_edge(coef, rate, lag):
    if coef == NEG_INF:
        return NEG_INF
    return coef - rate * lag


@njit(cache=True)
def _draw(logw, n, u):
    top = NEG_INF
    for k in range(n):
        if logw[k] > top:
            top = logw[k]
    total = 0.0
    for k in range(n):
        w = math.exp(logw[k] - top) if logw[k] > NEG_INF else 0.0
        logw[k] = w
        total += w
    target = u * total
    acc = 0.0
    for k in range(n):
        acc += logw[k]
        if target < acc:
            return k
    # u*total rounded up to total: last candidate with positive weight
    for k in range(n - 1, -1, -1):
        if logw[k] > 0.0:
            return k
    return 0


@njit(cache=True)
def ancestor_sweep(times, dims, parents, head, nxt, prv, log_K, log_L, g_rate, h_rate,
                   log_mu, comp_K, comp_L, cutoff, uniforms):
    """One reverse-time sweep over the parent labels (updates arrays in place).

    ``comp_K[j]``/``comp_L[j]`` are event j's censored compensators under either
    label; ``log_mu[j]`` is the log background rate at event j.
    """
    n = times.size
    logw = np.empty(n + 1)
    cand = np.empty(n + 1, np.int64)
    log_K = _edge_tables(log_K, g_rate)
    log_L = _edge_tables(log_L, h_rate)
    for j in range(n - 1, -1, -1):
        tj, dj = times[j], dims[j]
        out_imm = -comp_K[j]
        out_tr = -comp_L[j]
        c = head[j]
        while c >= 0:
            lag = times[c] - tj
            dc = dims[c]
            out_imm += _log_edge(log_K[dj, dc], g_rate[dj, dc], lag)
            out_tr += _log_edge(log_L[dj, dc], h_rate[dj, dc], lag)
            c = nxt[c]
        cand[0] = -1
        logw[0] = log_mu[j] + out_imm
        n_c = 1
        k = j - 1
        while k >= 0 and tj - times[k] <= cutoff:
            dk = dims[k]
            lag = tj - times[k]
            if parents[k] < 0:
                inc = _log_edge(log_K[dk, dj], g_rate[dk, dj], lag)
            else:
                inc = _log_edge(log_L[dk, dj], h_rate[dk, dj], lag)
            cand[n_c] = k
            logw[n_c] = inc + out_tr
            n_c += 1
            k -= 1
        new = cand[_draw(logw, n_c, uniforms[j])]
        old = parents[j]
        if new != old:
            if old >= 0:
                _unlink(j, old, head, nxt, prv)
            if new >= 0:
                _link(j, new, head, nxt, prv)
            parents[j] = new


@njit(cache=True)
def classic_sweep(times, dims, parents, log_K, g_rate, log_mu, cutoff, uniforms):
    """Independent parent draws for the classic model (updates ``parents`` in place)."""
    n = times.size
    logw = np.empty(n + 1)
    cand = np.empty(n + 1, np.int64)
    log_K = _edge_tables(log_K, g_rate)
    for j in range(n):
        tj, dj = times[j], dims[j]
        cand[0] = -1
        logw[0] = log_mu[j]
        n_c = 1
        k = j - 1
        while k >= 0 and tj - times[k] <= cutoff:
            dk = dims[k]
            cand[n_c] = k
            logw[n_c] = _log_edge(log_K[dk, dj], g_rate[dk, dj], tj - times[k])
            n_c += 1
            k -= 1
        parents[j] = cand[_draw(logw, n_c, uniforms[j])]


@njit(cache=True)
def rate_log_conditional(x, shape, rate, n_child, lag_sum, coef, tau):
    """Log conditional of one exponential kernel rate, up to a constant.

    Gamma(shape, rate) prior, ``n_child`` offspring lags summing to ``lag_sum``, and
    parents with magnitude ``coef[p]`` censored after ``tau[p]`` hours. ``tau`` must be
    ascending: the loop stops once the survival term underflows to zero.
    """
    if not x > 0.0:
        return NEG_INF
    s = (shape - 1.0 + n_child) * math.log(x) - (rate + lag_sum) * x
    for p in range(tau.size):
        z = x * tau[p]
        if z > 746.0:
            break
        s += coef[p] * math.exp(-z)
    return s


@njit(cache=True)
def perron_root(A, tol, max_iter):
    """Power iteration with Collatz-Wielandt bounds; NaN when it cannot certify."""
    n = A.shape[0]
    x = np.ones(n)
    y = np.empty(n)
    for _ in range(max_iter):
        lo, hi, norm = np.inf, 0.0, 0.0
        for i in range(n):
            acc = 0.0
            for k in range(n):
                acc += A[i, k] * x[k]
            if not acc > 0.0:
                return np.nan
            y[i] = acc
            r = acc / x[i]
            lo = min(lo, r)
            hi = max(hi, r)
            norm += acc * acc
        if hi - lo <= tol * max(hi, 1.0):
            return 0.5 * (lo + hi)
        norm = math.sqrt(norm)
        for i in range(n):
            x[i] = y[i] / norm
    return np.nan
