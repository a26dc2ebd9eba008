"""Compiled coordinate-descent kernel for ``||y - X b||^2 / n + lam * ||b||_1``.

``X`` and ``y`` are expected centered. A full sweep over all coordinates is
followed by Gram-matrix sweeps over the current support until the support
is stationary; the loop stops once the largest KKT violation over all
coordinates is at most ``tol``.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def _soft(z, t):
    if z > t:
        return z - t
    if z < -t:
        return z + t
    return 0.0


@njit(cache=True, nogil=True)
def _violation(g, b, lam):
    if b > 0.0:
        return abs(g - lam)
    if b < 0.0:
        return abs(g + lam)
    v = abs(g) - lam
    return v if v > 0.0 else 0.0


@njit(cache=True, nogil=True)
def _kkt_violation(X, r, beta, lam):
    n, p = X.shape
    worst = 0.0
    for j in range(p):
        g = 0.0
        for i in range(n):
            g += X[i, j] * r[i]
        v = _violation(2.0 * g / n, beta[j], lam)
        if v > worst:
            worst = v
    return worst


@njit(cache=True, nogil=True)
def _l1(beta):
    s = 0.0
    for j in range(beta.shape[0]):
        s += abs(beta[j])
    return s


@njit(cache=True, nogil=True)
def _full_sweep(X, r, beta, col_sq, lam):
    n, p = X.shape
    for j in range(p):
        if col_sq[j] == 0.0:
            continue
        cur = beta[j]
        rho = 0.0
        for i in range(n):
            rho += X[i, j] * r[i]
        new = _soft(rho / n + cur * col_sq[j] / n, lam / 2.0) / (col_sq[j] / n)
        if new != cur:
            d = new - cur
            for i in range(n):
                r[i] -= X[i, j] * d
            beta[j] = new


@njit(cache=True, nogil=True)
def _sign_fixed_step(G, c, beta, act, lam, n, rss):
    """Step towards the minimizer on the current support with signs held fixed.

    Solves ``G_S b = X_S^T y - (n lam / 2) sign(beta_S)`` on the non-zero
    support ``S`` and moves along the segment towards it, stopping where the
    first coefficient reaches zero. Inside one orthant the objective is a
    convex quadratic minimized at the segment's end, so the step never
    increases it.
    """
    na = act.shape[0]
    idx = np.empty(na, dtype=np.int64)
    k = 0
    for a in range(na):
        if beta[act[a]] != 0.0:
            idx[k] = a
            k += 1
    if k == 0:
        return rss
    Gs = np.empty((k, k))
    rhs = np.empty(k)
    cur = np.empty(k)
    for u in range(k):
        cur[u] = beta[act[idx[u]]]
    for u in range(k):
        s = c[idx[u]]
        for v in range(k):
            Gs[u, v] = G[idx[u], idx[v]]
            s += G[idx[u], idx[v]] * cur[v]
        sg = 1.0 if cur[u] > 0.0 else -1.0
        rhs[u] = s - 0.5 * n * lam * sg
    try:
        sol = np.linalg.solve(Gs, rhs)
    except Exception:
        return rss
    t = 1.0
    for u in range(k):
        if not np.isfinite(sol[u]):
            return rss
        if sol[u] * cur[u] <= 0.0:
            # walk only up to the first sign change
            tu = cur[u] / (cur[u] - sol[u])
            if tu < t:
                t = tu
    d = t * (sol - cur)
    # objective change: (d^T G d - 2 d^T c) / n + lam * (|new|_1 - |cur|_1)
    gd = Gs @ d
    drss = 0.0
    dl1 = 0.0
    for u in range(k):
        drss += d[u] * gd[u] - 2.0 * d[u] * c[idx[u]]
        dl1 += abs(cur[u] + d[u]) - abs(cur[u])
    if drss / n + lam * dl1 > 0.0:
        return rss
    for u in range(k):
        nb = cur[u] + d[u]
        if nb * cur[u] <= 0.0 or abs(nb) <= 1e-15 * abs(cur[u]):
            nb = 0.0
            d[u] = -cur[u]
        beta[act[idx[u]]] = nb
    for a in range(na):
        s = 0.0
        for u in range(k):
            s += G[a, idx[u]] * d[u]
        c[a] -= s
    return rss + drss


@njit(cache=True, nogil=True)
def _active_loop(X, r, beta, act, lam, max_sweeps, tol, trace, n_trace, gram):
    """Gram-matrix coordinate descent restricted to ``act``.

    ``gram`` is either the full ``X^T X`` (sliced here) or an empty array, in
    which case the block for ``act`` is formed on the spot.
    Returns ``(sweeps_done, n_trace)``; ``r`` is brought up to date at the end.
    """
    n = X.shape[0]
    na = act.shape[0]
    old = np.empty(na)
    for a in range(na):
        old[a] = beta[act[a]]
    if gram.shape[0] > 0:
        G = np.empty((na, na))
        for a in range(na):
            for b in range(na):
                G[a, b] = gram[act[a], act[b]]
    else:
        Xa = np.empty((n, na))
        for a in range(na):
            for i in range(n):
                Xa[i, a] = X[i, act[a]]
        G = Xa.T @ Xa
    c = np.empty(na)
    for a in range(na):
        s = 0.0
        for i in range(n):
            s += X[i, act[a]] * r[i]
        c[a] = s
    rss = 0.0
    for i in range(n):
        rss += r[i] * r[i]
    sweeps = 0
    while sweeps < max_sweeps:
        for a in range(na):
            if G[a, a] == 0.0:
                continue
            ja = act[a]
            cur = beta[ja]
            new = _soft((c[a] + G[a, a] * cur) / n, lam / 2.0) / (G[a, a] / n)
            if new != cur:
                d = new - cur
                rss += d * (d * G[a, a] - 2.0 * c[a])
                for b in range(na):
                    c[b] -= G[b, a] * d
                beta[ja] = new
        sweeps += 1
        if sweeps >= 20 and sweeps % 10 == 0:
            rss = _sign_fixed_step(G, c, beta, act, lam, n, rss)
        if n_trace < trace.shape[0]:
            trace[n_trace] = rss / n + lam * _l1(beta)
            n_trace += 1
        worst = 0.0
        for a in range(na):
            v = _violation(2.0 * c[a] / n, beta[act[a]], lam)
            if v > worst:
                worst = v
        if worst <= 0.1 * tol:
            break
    for a in range(na):
        d = beta[act[a]] - old[a]
        if d != 0.0:
            ja = act[a]
            for i in range(n):
                r[i] -= X[i, ja] * d
    return sweeps, n_trace


@njit(cache=True, nogil=True)
def coordinate_descent(X, y, beta, lam, max_iter, tol, trace, gram):
    """Run coordinate descent in place on ``beta``.

    Returns ``(n_sweeps, kkt_violation, trace_len)``; ``trace`` receives the
    objective after every sweep (full or active-set) up to its length.
    ``gram`` is ``X^T X`` or a ``(0, 0)`` array.
    """
    n, p = X.shape
    col_sq = np.zeros(p)
    for j in range(p):
        s = 0.0
        for i in range(n):
            s += X[i, j] * X[i, j]
        col_sq[j] = s
    r = y.copy()
    for j in range(p):
        if beta[j] != 0.0:
            for i in range(n):
                r[i] -= X[i, j] * beta[j]
    sweeps = 0
    n_trace = 0
    viol = _kkt_violation(X, r, beta, lam)
    if viol <= tol:
        return sweeps, viol, n_trace
    active = np.zeros(p, dtype=np.int64)
    while sweeps < max_iter:
        _full_sweep(X, r, beta, col_sq, lam)
        sweeps += 1
        if n_trace < trace.shape[0]:
            rss = 0.0
            for i in range(n):
                rss += r[i] * r[i]
            trace[n_trace] = rss / n + lam * _l1(beta)
            n_trace += 1
        na = 0
        for j in range(p):
            if beta[j] != 0.0:
                active[na] = j
                na += 1
        if na > 0 and sweeps < max_iter:
            done, n_trace = _active_loop(X, r, beta, active[:na], lam, max_iter - sweeps, tol, trace, n_trace,
                                          gram)
            sweeps += done
        viol = _kkt_violation(X, r, beta, lam)
        if viol <= tol:
            break
    return sweeps, viol, n_trace
