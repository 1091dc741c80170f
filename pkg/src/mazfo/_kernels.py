"""Compiled round loop for quadratic instances with ball-shaped local sets.

Mirrors ``algorithm._run_reference`` step for step; results agree with it up
to floating-point summation order.  Perturbations are drawn in numpy from the
same streams and handed over in chunks.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from .algorithm import DIVERGENCE_FACTOR, TrialResult, sample_points
from .problem import constraint_sums, global_objective
from .zeroth_order import BLOCK, OracleCounter, PerturbationStreams

SENTINEL = -1


@njit(cache=True)
def _quad_values(A2, b, c, V, AV, out):
    """f_i at the columns of V (d x 2) for every agent; A2 stacks the A_i as (n*d, d)."""
    n, d = b.shape
    np.dot(A2, V, AV)
    for i in range(n):
        for col in range(V.shape[1]):
            acc = c[i]
            for p in range(d):
                acc += V[p, col] * (AV[i * d + p, col] + b[i, p])
            out[i, col] = acc


@njit(cache=True)
def _constraints(P, q, r, offsets, v, out):
    n, m = r.shape
    for i in range(n):
        lo = offsets[i]
        di = offsets[i + 1] - lo
        for j in range(m):
            acc = r[i, j]
            for a in range(di):
                s = q[i, j, a]
                for bb in range(di):
                    s += P[i, j, a, bb] * v[lo + bb]
                acc += v[lo + a] * s
            out[i, j] = acc


@njit(cache=True)
def _rms_spread(Y):
    n, m = Y.shape
    tot = 0.0
    for j in range(m):
        mean = 0.0
        for i in range(n):
            mean += Y[i, j]
        mean /= n
        for i in range(n):
            dv = Y[i, j] - mean
            tot += dv * dv
    return np.sqrt(tot / n)


@njit(cache=True)
def _rounds(t0, Zc, ZHc, ZBc, eta, mu, theta, gamma, u, C,
            A2, b, c, P, q, r, offsets, owner, W, src_ptr, src_idx, centers, radii,
            x, Y, x_prev, g_prev, chat_prev, zhat_prev, ell_curr,
            D, tau, snap_D, snap_tau, zbuf, zstamp, sum_x, sum_w,
            rec_rows, xbar_out, spread_out, mon_out, iter_out, keep_iter, limit):
    n, m = r.shape
    d = x.shape[0]
    cap = zbuf.shape[0]
    steps = Zc.shape[0]
    vp = np.empty(d)
    vm = np.empty(d)
    V = np.empty((d, 2))
    AV = np.empty((n * d, 2))
    fvals = np.empty((n, 2))
    g_now = np.empty((n, m))
    g_p = np.empty((n, m))
    g_m = np.empty((n, m))
    S = np.empty((n, m))
    ell_next = np.empty((n, m))
    chat = np.empty((n, m))
    Y_new = np.empty((n, m))
    p = np.empty(m)
    G0 = np.empty(d)
    x_new = np.empty(d)
    for k in range(steps):
        t = t0 + k
        # 1. objective probes, own entries
        for a in range(d):
            V[a, 0] = x[a] + u * Zc[k, a]
            V[a, 1] = x[a] - u * Zc[k, a]
        slot = t % cap
        for a in range(d):
            zbuf[slot, a] = Zc[k, a]
        zstamp[slot] = t
        _quad_values(A2, b, c, V, AV, fvals)
        for i in range(n):
            D[i, i] = (fvals[i, 0] - fvals[i, 1]) / (2.0 * u)
            tau[i, i] = t
            if not np.isfinite(D[i, i]):
                return 1, t

        # 2. constraint feedback and extrapolation
        _constraints(P, q, r, offsets, x, g_now)
        if t == 0:
            for i in range(n):
                for j in range(m):
                    ell_curr[i, j] = g_now[i, j]
                    S[i, j] = g_now[i, j]
        else:
            for i in range(n):
                dot = 0.0
                for a in range(offsets[i], offsets[i + 1]):
                    dot += zhat_prev[a] * (x[a] - x_prev[a])
                for j in range(m):
                    ell_next[i, j] = g_prev[i, j] + chat_prev[i, j] * dot
                    S[i, j] = (1.0 + theta[k]) * ell_next[i, j] - theta[k] * ell_curr[i, j]
            for i in range(n):
                for j in range(m):
                    ell_curr[i, j] = ell_next[i, j]
        for a in range(d):
            vp[a] = x[a] + u * ZHc[k, a]
            vm[a] = x[a] - u * ZHc[k, a]
        _constraints(P, q, r, offsets, vp, g_p)
        _constraints(P, q, r, offsets, vm, g_m)
        for i in range(n):
            for j in range(m):
                chat[i, j] = (g_p[i, j] - g_m[i, j]) / (2.0 * u)

        # 3. gossip from end-of-previous-round snapshots
        for i in range(n):
            for j in range(n):
                if j == i:
                    continue
                best = src_idx[src_ptr[i]]
                best_tau = snap_tau[best, j]
                for e in range(src_ptr[i] + 1, src_ptr[i + 1]):
                    kk = src_idx[e]
                    if snap_tau[kk, j] > best_tau:
                        best_tau = snap_tau[kk, j]
                        best = kk
                tau[i, j] = best_tau
                D[i, j] = snap_D[best, j]

        # 4-5. consensus + projected dual step
        spread_before = _rms_spread(Y)
        for i in range(n):
            nrm = 0.0
            for j in range(m):
                acc = 0.0
                for kk in range(n):
                    acc += W[i, kk] * Y[kk, j]
                v = acc + mu[k] * S[i, j]
                if v < 0.0:
                    v = 0.0
                p[j] = v
                nrm += v * v
            nrm = np.sqrt(nrm)
            scale = C / nrm if nrm > C else 1.0
            for j in range(m):
                Y_new[i, j] = p[j] * scale

        # 6. dual-weighted constraint probes
        for a in range(d):
            vp[a] = x[a] + u * ZBc[k, a]
            vm[a] = x[a] - u * ZBc[k, a]
        _constraints(P, q, r, offsets, vp, g_p)
        _constraints(P, q, r, offsets, vm, g_m)

        # 7. delayed cost-gradient estimate
        for a in range(d):
            i = owner[a]
            acc = 0.0
            for j in range(n):
                st = tau[i, j]
                if st >= 0:
                    sl = st % cap
                    if zstamp[sl] != st:
                        return 3, t
                    acc += D[i, j] * zbuf[sl, a]
            G0[a] = acc / n

        # 8. primal step with per-agent ball projection
        for i in range(n):
            w = 0.0
            for j in range(m):
                w += (g_p[i, j] - g_m[i, j]) / (2.0 * u) * Y_new[i, j]
            lo = offsets[i]
            hi = offsets[i + 1]
            nrm = 0.0
            for a in range(lo, hi):
                x_new[a] = x[a] - eta[k] * (G0[a] + w * ZBc[k, a])
                dv = x_new[a] - centers[a]
                nrm += dv * dv
            nrm = np.sqrt(nrm)
            if nrm > radii[i]:
                sc = radii[i] / nrm
                for a in range(lo, hi):
                    x_new[a] = centers[a] + (x_new[a] - centers[a]) * sc

        xn = 0.0
        for a in range(d):
            xn += x_new[a] * x_new[a]
        if not np.isfinite(xn):
            return 1, t
        if np.sqrt(xn) > limit:
            return 2, t

        # end of round: publish tables, shift state
        for i in range(n):
            for j in range(n):
                snap_tau[i, j] = tau[i, j]
                snap_D[i, j] = D[i, j]
        for a in range(d):
            x_prev[a] = x[a]
            x[a] = x_new[a]
            zhat_prev[a] = ZHc[k, a]
        for i in range(n):
            for j in range(m):
                g_prev[i, j] = g_now[i, j]
                chat_prev[i, j] = chat[i, j]
                Y[i, j] = Y_new[i, j]
        smax = 0.0
        for i in range(n):
            s2 = 0.0
            for j in range(m):
                s2 += S[i, j] * S[i, j]
            if s2 > smax:
                smax = s2
        mon_out[k, 0] = spread_before
        mon_out[k, 1] = _rms_spread(Y)
        mon_out[k, 2] = np.sqrt(smax)

        # 9. running average
        sum_w[0] += gamma[k]
        for a in range(d):
            sum_x[a] += gamma[k] * x[a]
        if keep_iter:
            for a in range(d):
                iter_out[k, a] = x[a]
        row = rec_rows[k]
        if row >= 0:
            for a in range(d):
                xbar_out[row, a] = sum_x[a] / sum_w[0]
            spread_out[row] = mon_out[k, 1]
    return 0, t0 + steps


def _pack(instance):
    n, m = instance.n, instance.m
    dmax = int(instance.dims.max())
    P = np.zeros((n, m, dmax, dmax))
    q = np.zeros((n, m, dmax))
    for i, di in enumerate(instance.dims):
        P[i, :, :di, :di] = instance.spec.P[i]
        q[i, :, :di] = instance.spec.q[i]
    A2 = np.ascontiguousarray(instance.spec.A.reshape(n * instance.d, instance.d))
    centers = np.concatenate([s.center for s in instance.sets])
    radii = np.array([s.radius for s in instance.sets])
    owner = np.repeat(np.arange(n), instance.dims).astype(np.int64)
    return (A2, np.ascontiguousarray(instance.spec.b), np.ascontiguousarray(instance.spec.c),
            P, q, np.ascontiguousarray(instance.spec.r).reshape(n, m),
            instance.offsets.astype(np.int64), owner, centers, radii)


def run_quadratic(instance, topology, schedule, seed, T, trial, stride, monitor,
                  keep_iterates) -> TrialResult:
    from .errors import NonFiniteIterate, StaleBeyondBuffer

    n, m, d = instance.n, instance.m, instance.d
    A2, b, c, P, q, r, offsets, owner, centers, radii = _pack(instance)
    W = np.ascontiguousarray(topology.weights)
    # sources of agent i (neighbours and itself) in increasing index order,
    # so the first maximum found is the lowest-index one
    sources = topology.adjacency | np.eye(n, dtype=bool)
    src_ptr = np.concatenate([[0], np.cumsum(sources.sum(axis=1))]).astype(np.int64)
    src_idx = np.concatenate([np.flatnonzero(row) for row in sources]).astype(np.int64)
    cap = topology.diameter + 1
    streams = PerturbationStreams(seed, trial, instance.dims)
    counter = OracleCounter(n)
    limit = DIVERGENCE_FACTOR * instance.R_bar

    x = instance.project(np.zeros(d))
    Y = np.zeros((n, m))
    x_prev = x.copy()
    g_prev = np.zeros((n, m))
    chat_prev = np.zeros((n, m))
    zhat_prev = np.zeros(d)
    ell_curr = np.zeros((n, m))
    D = np.zeros((n, n))
    tau = np.full((n, n), SENTINEL, dtype=np.int64)
    snap_D = D.copy()
    snap_tau = tau.copy()
    zbuf = np.zeros((cap, d))
    zstamp = np.full(cap, SENTINEL, dtype=np.int64)
    sum_x = np.zeros(d)
    sum_w = np.zeros(1)

    pts = sample_points(T, stride)
    rec_rows_all = np.full(T, -1, dtype=np.int64)
    rec_rows_all[pts - 1] = np.arange(len(pts))
    xbars = np.empty((len(pts), d))
    spreads = np.empty(len(pts))
    mon = np.empty((T, 3)) if monitor else None
    iterates = np.empty((T, d)) if keep_iterates else None

    t = 0
    while t < T:
        stop = min(T, (t // BLOCK + 1) * BLOCK)
        eta, mu, theta, gamma = schedule.steps(t, stop)
        mon_chunk = mon[t:stop] if monitor else np.empty((stop - t, 3))
        iter_chunk = iterates[t:stop] if keep_iterates else np.empty((0, d))
        status, where = _rounds(
            t, streams.rounds("z", t, stop), streams.rounds("zhat", t, stop),
            streams.rounds("zbar", t, stop), eta, mu, theta, gamma,
            float(schedule.u), float(schedule.C),
            A2, b, c, P, q, r, offsets, owner, W, src_ptr, src_idx, centers, radii,
            x, Y, x_prev, g_prev, chat_prev, zhat_prev, ell_curr,
            D, tau, snap_D, snap_tau, zbuf, zstamp, sum_x, sum_w,
            rec_rows_all[t:stop], xbars, spreads, mon_chunk, iter_chunk,
            keep_iterates, limit)
        if status == 3:
            raise StaleBeyondBuffer(f"ring buffer miss in round {where}")
        if status:
            raise NonFiniteIterate(f"trial {trial}: iterate diverged in round {where}", where,
                                   {"x_norm": float(np.linalg.norm(x))})
        counter.charge_rounds(m, stop - t)
        t = stop

    sums = np.array([constraint_sums(instance, xb) for xb in xbars]).reshape(len(pts), m)
    monitor_out = None
    if monitor:
        monitor_out = {"spread_before": mon[:, 0].copy(), "spread_after": mon[:, 1].copy(),
                       "s_max": mon[:, 2].copy(), "mu": schedule.steps(0, T)[1]}
    return TrialResult(
        iters=pts, objective=np.array([global_objective(instance, xb) for xb in xbars]),
        constraint_sums=sums, violation=np.linalg.norm(np.maximum(sums, 0.0), axis=1),
        spread=spreads, oracle=counter, seed=seed, trial=trial, x_bar=sum_x / sum_w[0],
        monitor=monitor_out, iterates=iterates,
    )
