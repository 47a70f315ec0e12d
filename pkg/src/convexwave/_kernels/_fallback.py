"""Pure-numpy fallbacks for the compiled kernels.

The eikonal sweep vectorises over anti-diagonal levels (i + j + k constant in
the sweep-oriented index frame).  Nodes on one level only read neighbours on
the two adjacent levels, so processing levels in ascending order reproduces
the information flow of the compiled lexicographic Gauss-Seidel sweep node
for node, and both backends converge to the same field.
"""

import numpy as np

_BIG = 1e30

# per-shape cache: (int16 index triplets sorted by i+j+k, level offsets)
_levels_cache: dict = {}


def wave_step(u_next, u_curr, u_prev, alpha):
    """In-place interior update  u_next = 2 u - u_old + alpha (sum_nb - 6 u)."""
    c = u_curr[1:-1, 1:-1, 1:-1]
    s = u_curr[:-2, 1:-1, 1:-1] + u_curr[2:, 1:-1, 1:-1]
    s = s + u_curr[1:-1, :-2, 1:-1]
    s = s + u_curr[1:-1, 2:, 1:-1]
    s = s + u_curr[1:-1, 1:-1, :-2]
    s = s + u_curr[1:-1, 1:-1, 2:]
    u_next[1:-1, 1:-1, 1:-1] = (2.0 * c - u_prev[1:-1, 1:-1, 1:-1]) \
        + alpha[1:-1, 1:-1, 1:-1] * (s - 6.0 * c)


def _levels(shape):
    entry = _levels_cache.get(shape)
    if entry is None:
        idx = np.indices(shape, dtype=np.int16)
        ell = (idx[0].astype(np.int32) + idx[1] + idx[2]).ravel()
        order = np.argsort(ell, kind="stable")
        trip = np.stack([a.ravel()[order] for a in idx])
        nlev = shape[0] + shape[1] + shape[2] - 2
        bounds = np.searchsorted(ell[order], np.arange(nlev + 1))
        entry = (trip, bounds)
        _levels_cache[shape] = entry
    return entry


def eikonal_sweep(tau, rhs, frozen, ordering):
    """One Gauss-Seidel sweep over diagonal levels; see the compiled twin."""
    nx, ny, nz = tau.shape
    trip, bounds = _levels((nx, ny, nz))
    padded = np.full((nx + 2, ny + 2, nz + 2), _BIG)
    padded[1:-1, 1:-1, 1:-1] = tau
    tp = padded.ravel()
    rf = rhs.ravel()
    fz = frozen.ravel().view(bool)
    sx = (ny + 2) * (nz + 2)
    sy = nz + 2
    maxdiff = 0.0
    for lev in range(len(bounds) - 1):
        sel = slice(bounds[lev], bounds[lev + 1])
        i = trip[0, sel].astype(np.int64)
        j = trip[1, sel].astype(np.int64)
        k = trip[2, sel].astype(np.int64)
        if ordering & 1:
            i = (nx - 1) - i
        if ordering & 2:
            j = (ny - 1) - j
        if ordering & 4:
            k = (nz - 1) - k
        flat = (i * ny + j) * nz + k
        base = ((i + 1) * (ny + 2) + (j + 1)) * (nz + 2) + (k + 1)
        a = np.minimum(tp[base - sx], tp[base + sx])
        b = np.minimum(tp[base - sy], tp[base + sy])
        c = np.minimum(tp[base - 1], tp[base + 1])
        # 3-element sorting network
        lo = np.minimum(a, b)
        hi = np.maximum(a, b)
        mid = np.minimum(hi, c)
        c = np.maximum(hi, c)
        a = np.minimum(lo, mid)
        b = np.maximum(lo, mid)
        f = rf[flat]
        t1 = a + f
        d2 = np.maximum(2.0 * f * f - (a - b) * (a - b), 0.0)
        t2 = 0.5 * ((a + b) + np.sqrt(d2))
        ss = (a + b) + c
        d3 = np.maximum(ss * ss - 3.0 * (((a * a + b * b) + c * c) - f * f), 0.0)
        t3 = (ss + np.sqrt(d3)) / 3.0
        tnew = np.where(t1 <= b, t1, np.where(t2 <= c, t2, t3))
        told = tp[base]
        upd = np.minimum(told, tnew)
        upd[fz[flat]] = told[fz[flat]]
        d = told - upd
        if d.size:
            maxdiff = max(maxdiff, float(d.max()))
        tp[base] = upd
    tau[:] = padded[1:-1, 1:-1, 1:-1]
    return maxdiff
