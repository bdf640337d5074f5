"""Numba kernel for the characteristic backup of the two-car relative system.

Each node is advanced along exact trajectories with the controls and the
disturbance held for one step.  Robot and human motions are independent
given their inputs, so both are tabulated per grid node value (robot: per
``v_r`` node; human: per ``(psi_rel, v_h)`` node) and combined per node.
The collision distance is checked at every tabulated sub-step so the target
cannot be jumped over within a step.
"""

import math

import numpy as np
from numba import njit


@njit(cache=True)
def _interp(values, shape, strides, lower, spacing, periodic, s, lo_off, hi_off, w, w_c, off_c):
    ndim = shape.shape[0]
    for k in range(ndim):
        n = shape[k]
        r = (s[k] - lower[k]) / spacing[k]
        if periodic[k]:
            fl = math.floor(r)
            f = r - fl
            i = int(fl) % n
            i1 = i + 1
            if i1 == n:
                i1 = 0
        else:
            if r <= 0.0:
                i, f = 0, 0.0
            elif r >= n - 1:
                i, f = n - 2, 1.0
            else:
                i = int(math.floor(r))
                if i > n - 2:
                    i = n - 2
                f = r - i
            i1 = i + 1
        lo_off[k] = i * strides[k]
        hi_off[k] = i1 * strides[k]
        w[k] = f
    w_c[0] = 1.0
    off_c[0] = 0
    size = 1
    for k in range(ndim):
        f = w[k]
        for c in range(size):
            w_c[c + size] = w_c[c] * f
            off_c[c + size] = off_c[c] + hi_off[k]
            w_c[c] *= 1.0 - f
            off_c[c] += lo_off[k]
        size *= 2
    acc = 0.0
    for c in range(size):
        acc += w_c[c] * values[off_c[c]]
    return acc


@njit(cache=True)
def pair_backup(
    values, terminal, shape, strides, lower, spacing, periodic,
    r_theta, r_px, r_py, r_v,
    h_px, h_py, h_v, h_dpsi,
    r_coll, first_u, out,
):
    """One backup ``min(l, max_u min_d min(path clearance, V(foot)))``.

    Tables: ``r_*[iv_r, u(, k)]`` robot heading change, world position per
    sub-step and final speed; ``h_p*[i_psi, iv_h, d, k]`` human displacement
    per sub-step, ``h_v[iv_h, d]`` final speed, ``h_dpsi[d]`` heading change.
    ``r_coll < 0`` disables the sub-step clearance check.  ``first_u`` holds
    the control tried first at each node and is updated in place.
    """
    n_nodes = values.shape[0]
    n_u = r_theta.shape[1]
    n_d = h_v.shape[1]
    n_sub = r_px.shape[2]
    ndim = shape.shape[0]
    s = np.empty(ndim)
    lo_off = np.empty(ndim, dtype=np.int64)
    hi_off = np.empty(ndim, dtype=np.int64)
    w = np.empty(ndim)
    w_c = np.empty(1 << ndim)
    off_c = np.empty(1 << ndim, dtype=np.int64)
    check = r_coll >= 0.0
    for p in range(n_nodes):
        i0 = (p // strides[0]) % shape[0]
        i1 = (p // strides[1]) % shape[1]
        i2 = (p // strides[2]) % shape[2]
        i3 = (p // strides[3]) % shape[3]
        i4 = (p // strides[4]) % shape[4]
        x = lower[0] + i0 * spacing[0]
        y = lower[1] + i1 * spacing[1]
        psi = lower[2] + i2 * spacing[2]
        cap = terminal[p]
        best = -np.inf
        best_u = first_u[p]
        for j in range(n_u):
            # try last step's maximizer first; it usually sets a high bar for pruning
            if j == 0:
                u = first_u[p]
            elif j <= first_u[p]:
                u = j - 1
            else:
                u = j
            worst = np.inf
            for d in range(n_d):
                cand = np.inf
                if check:
                    dmin = np.inf
                    for k in range(n_sub):
                        hx = x + h_px[i2, i4, d, k] - r_px[i3, u, k]
                        hy = y + h_py[i2, i4, d, k] - r_py[i3, u, k]
                        q = hx * hx + hy * hy
                        if q < dmin:
                            dmin = q
                    cand = math.sqrt(dmin) - r_coll
                    if cand <= best:
                        worst = cand
                        break
                hx = x + h_px[i2, i4, d, n_sub - 1] - r_px[i3, u, n_sub - 1]
                hy = y + h_py[i2, i4, d, n_sub - 1] - r_py[i3, u, n_sub - 1]
                th = r_theta[i3, u]
                c, sn = math.cos(th), math.sin(th)
                s[0] = c * hx + sn * hy
                s[1] = -sn * hx + c * hy
                s[2] = psi + h_dpsi[d] - th
                s[3] = r_v[i3, u]
                s[4] = h_v[i4, d]
                val = _interp(values, shape, strides, lower, spacing, periodic, s, lo_off, hi_off, w, w_c, off_c)
                if val < cand:
                    cand = val
                if cand < worst:
                    worst = cand
                    if worst <= best:
                        break
            if worst > best:
                best = worst
                best_u = u
                if best >= cap:
                    break
        first_u[p] = best_u
        out[p] = best if best < cap else cap


@njit(cache=True)
def interp_points(values, shape, strides, lower, spacing, periodic, pts, out):
    """Clamped multilinear interpolation at the columns of ``pts`` (ndim, n)."""
    ndim = shape.shape[0]
    s = np.empty(ndim)
    lo_off = np.empty(ndim, dtype=np.int64)
    hi_off = np.empty(ndim, dtype=np.int64)
    w = np.empty(ndim)
    w_c = np.empty(1 << ndim)
    off_c = np.empty(1 << ndim, dtype=np.int64)
    for p in range(pts.shape[1]):
        for k in range(ndim):
            s[k] = pts[k, p]
        out[p] = _interp(values, shape, strides, lower, spacing, periodic, s, lo_off, hi_off, w, w_c, off_c)
