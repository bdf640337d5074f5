"""Numba kernel for the semi-Lagrangian backup.

For each node the kernel takes the foot point ``s + dt * f(s, u, 0)`` of one
control sample and returns the minimum of the multilinear interpolant over
a box of additive shifts in the disturbed coordinates.  Along each disturbed
coordinate the interpolant is piecewise linear with breakpoints at grid
nodes, so the minimum over the box is attained at a product of interval
endpoints and interior grid crossings; enumerating those is exact.
"""

import math

import numpy as np
from numba import njit

MAX_SPAN = 8


@njit(cache=True)
def _locate(r, n, periodic):
    """Cell index and fraction for relative coordinate r (clamped/wrapped)."""
    if periodic:
        fl = math.floor(r)
        frac = r - fl
        i = int(fl) % n
        return i, frac
    if r <= 0.0:
        return 0, 0.0
    if r >= n - 1:
        return n - 2, 1.0
    i = int(math.floor(r))
    if i > n - 2:
        i = n - 2
    return i, r - i


@njit(cache=True)
def box_min_interp(values, shape, strides, lower, spacing, periodic, foot, ddims, dlo, dhi, out):
    """At most two disturbed dims; absent ones are padded with a degenerate span."""
    ndim = shape.shape[0]
    npts = foot.shape[1]
    m = ddims.shape[0]
    is_dist = np.zeros(ndim, dtype=np.bool_)
    for j in range(m):
        is_dist[ddims[j]] = True
    free = np.empty(ndim - m, dtype=np.int64)
    c = 0
    for k in range(ndim):
        if not is_dist[k]:
            free[c] = k
            c += 1
    nfree = ndim - m
    ncorner = 1 << nfree
    off_c = np.empty(ncorner, dtype=np.int64)
    w_c = np.empty(ncorner)
    lo_off = np.empty(nfree, dtype=np.int64)
    hi_off = np.empty(nfree, dtype=np.int64)
    wfree = np.empty(nfree)
    kcount = np.full(2, 2, dtype=np.int64)
    span_off = np.zeros((2, MAX_SPAN), dtype=np.int64)
    cand_i = np.zeros((2, MAX_SPAN + 2), dtype=np.int64)
    cand_f = np.zeros((2, MAX_SPAN + 2))
    ncand = np.ones(2, dtype=np.int64)
    W = np.empty((MAX_SPAN, MAX_SPAN))
    for p in range(npts):
        for q in range(nfree):
            k = free[q]
            r = (foot[k, p] - lower[k]) / spacing[k]
            i, f = _locate(r, shape[k], periodic[k])
            i1 = i + 1
            if periodic[k] and i1 == shape[k]:
                i1 = 0
            lo_off[q] = i * strides[k]
            hi_off[q] = i1 * strides[k]
            wfree[q] = f
        # tensor-product expansion of the free-dim corner weights
        w_c[0] = 1.0
        off_c[0] = 0
        size = 1
        for q in range(nfree):
            f = wfree[q]
            for c in range(size):
                w_c[c + size] = w_c[c] * f
                off_c[c + size] = off_c[c] + hi_off[q]
                w_c[c] *= 1.0 - f
                off_c[c] += lo_off[q]
            size *= 2
        for j in range(m):
            k = ddims[j]
            n = shape[k]
            lo = (foot[k, p] + dlo[j] - lower[k]) / spacing[k]
            hi = (foot[k, p] + dhi[j] - lower[k]) / spacing[k]
            if not periodic[k]:
                lo = min(max(lo, 0.0), n - 1.0)
                hi = min(max(hi, 0.0), n - 1.0)
            a = int(math.floor(lo))
            b = int(math.floor(hi)) + 1
            if not periodic[k]:
                if b > n - 1:
                    b = n - 1
                if a > n - 2:
                    a = n - 2
            cnt = b - a + 1
            kcount[j] = cnt
            for t in range(cnt):
                node = a + t
                if periodic[k]:
                    node = node % n
                span_off[j, t] = node * strides[k]
            # candidates: lo, interior grid crossings, hi
            q = 0
            node = a + 1
            r = lo
            while True:
                ii = int(math.floor(r))
                ff = r - ii
                ii -= a
                if ii >= cnt - 1:
                    ii = cnt - 2
                    ff = 1.0
                cand_i[j, q] = ii
                cand_f[j, q] = ff
                q += 1
                if r >= hi:
                    break
                while node <= lo:
                    node += 1
                if node < hi:
                    r = float(node)
                    node += 1
                else:
                    r = hi
            ncand[j] = q
        for t0 in range(kcount[0]):
            o0 = span_off[0, t0]
            for t1 in range(kcount[1]):
                base = o0 + span_off[1, t1]
                acc = 0.0
                for corner in range(ncorner):
                    acc += w_c[corner] * values[base + off_c[corner]]
                W[t0, t1] = acc
        best = np.inf
        for c0 in range(ncand[0]):
            i0 = cand_i[0, c0]
            f0 = cand_f[0, c0]
            for c1 in range(ncand[1]):
                i1 = cand_i[1, c1]
                f1 = cand_f[1, c1]
                val = (1.0 - f0) * ((1.0 - f1) * W[i0, i1] + f1 * W[i0, i1 + 1]) + f0 * (
                    (1.0 - f1) * W[i0 + 1, i1] + f1 * W[i0 + 1, i1 + 1]
                )
                if val < best:
                    best = val
        out[p] = best
