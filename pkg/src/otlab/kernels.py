"""Inner loops that dominate runtime, each in a numba and a numpy flavour.

Public names (``lse_rows``, ``gibbs_rows``, ``log_matmul``, ``maxplus_extend``,
``edge_slopes``, ``trace_crossings``) dispatch to the numba implementation
unless ``OTLAB_DISABLE_NUMBA`` is set; the ``*_numpy`` and ``*_numba``
variants stay importable so tests and the benchmark can compare them.
"""

import numpy as np

from ._accel import USE_NUMBA, njit

__all__ = [
    "lse_rows",
    "gibbs_rows",
    "log_matmul",
    "maxplus_extend",
    "edge_slopes",
    "trace_crossings",
    "BACKEND",
]

# Relative slack when two intersection parameters or a vertex hit coincide.
_COINCIDE = 1e-12


# --------------------------------------------------------------------------
# stabilized log-sum-exp over rows:  out[x] = log sum_y exp(logk[x, y] + a[y])


def lse_rows_numpy(logk, a):
    z = logk + a[None, :]
    zmax = np.max(z, axis=1)
    return zmax + np.log(np.sum(np.exp(z - zmax[:, None]), axis=1))


@njit(cache=True)
def lse_rows_numba(logk, a):
    n, k = logk.shape
    out = np.empty(n)
    for i in range(n):
        zmax = -np.inf
        for j in range(k):
            v = logk[i, j] + a[j]
            if v > zmax:
                zmax = v
        s = 0.0
        for j in range(k):
            s += np.exp(logk[i, j] + a[j] - zmax)
        out[i] = zmax + np.log(s)
    return out


def gibbs_rows_numpy(logk, a):
    """Row-normalized weights ``exp(logk + a)`` and their log-normalizers."""
    z = logk + a[None, :]
    zmax = np.max(z, axis=1)
    w = np.exp(z - zmax[:, None])
    s = w.sum(axis=1)
    w /= s[:, None]
    return zmax + np.log(s), w


@njit(cache=True)
def gibbs_rows_numba(logk, a):
    n, k = logk.shape
    lse = np.empty(n)
    w = np.empty((n, k))
    for i in range(n):
        zmax = -np.inf
        for j in range(k):
            v = logk[i, j] + a[j]
            if v > zmax:
                zmax = v
        s = 0.0
        for j in range(k):
            e = np.exp(logk[i, j] + a[j] - zmax)
            w[i, j] = e
            s += e
        for j in range(k):
            w[i, j] /= s
        lse[i] = zmax + np.log(s)
    return lse, w


# --------------------------------------------------------------------------
# log-domain matrix product:  out[i, j] = log sum_k exp(la[i, k] + lb[k, j])


def log_matmul_numpy(la, lb):
    n = la.shape[0]
    out = np.empty((n, lb.shape[1]))
    for i in range(n):
        z = la[i][:, None] + lb
        zmax = np.max(z, axis=0)
        finite = np.isfinite(zmax)
        safe = np.where(finite, zmax, 0.0)
        with np.errstate(divide="ignore"):
            out[i] = np.where(
                finite, safe + np.log(np.sum(np.exp(z - safe[None, :]), axis=0)), -np.inf
            )
    return out


@njit(cache=True, fastmath=False)
def log_matmul_numba(la, lb):
    n, k = la.shape
    m = lb.shape[1]
    out = np.empty((n, m))
    zmax = np.empty(m)
    s = np.empty(m)
    for i in range(n):
        zmax[:] = -np.inf
        for q in range(k):
            a = la[i, q]
            for j in range(m):
                v = a + lb[q, j]
                if v > zmax[j]:
                    zmax[j] = v
        s[:] = 0.0
        for q in range(k):
            a = la[i, q]
            for j in range(m):
                if zmax[j] > -np.inf:
                    s[j] += np.exp(a + lb[q, j] - zmax[j])
        for j in range(m):
            out[i, j] = zmax[j] + np.log(s[j]) if zmax[j] > -np.inf else -np.inf
    return out


# --------------------------------------------------------------------------
# McShane max-plus extension:  out[x] = max_z psi[z] - lip * d[z, x]


def maxplus_extend_numpy(psi, lip, d_zx):
    return np.max(psi[:, None] - lip * d_zx, axis=0)


@njit(cache=True)
def maxplus_extend_numba(psi, lip, d_zx):
    nz, nx = d_zx.shape
    out = np.full(nx, -np.inf)
    for z in range(nz):
        for x in range(nx):
            v = psi[z] - lip * d_zx[z, x]
            if v > out[x]:
                out[x] = v
    return out


# --------------------------------------------------------------------------
# discrete upper gradient:  out[i] = max_{j ~ i} |f[j] - f[i]| / len(i, j)


def edge_slopes_numpy(f, indptr, indices, lengths):
    n = len(indptr) - 1
    deg = np.diff(indptr)
    src = np.repeat(np.arange(n), deg)
    slope = np.abs(f[indices] - f[src]) / lengths
    out = np.zeros(n)
    np.maximum.at(out, src, slope)
    return out


@njit(cache=True)
def edge_slopes_numba(f, indptr, indices, lengths):
    n = len(indptr) - 1
    out = np.zeros(n)
    for i in range(n):
        best = 0.0
        for e in range(indptr[i], indptr[i + 1]):
            s = abs(f[indices[e]] - f[i]) / lengths[e]
            if s > best:
                best = s
        out[i] = best
    return out


# --------------------------------------------------------------------------
# straight-line traces against a polygon (torus or square world)


def _offsets(torus):
    if torus:
        return np.array([(i, j) for i in (-1, 0, 1) for j in (-1, 0, 1)], dtype=np.float64)
    return np.zeros((1, 2))


def _pip_numpy(px, py, poly):
    """Even-odd point-in-polygon for arrays of points (any shape)."""
    inside = np.zeros(px.shape, dtype=bool)
    nv = len(poly)
    for k in range(nv):
        ax, ay = poly[k]
        bx, by = poly[(k + 1) % nv]
        cond = (ay > py) != (by > py)
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = ax + (py - ay) * (bx - ax) / (by - ay)
        inside ^= cond & (px < xint)
    return inside


def _intersections(p0, d, ea, ee):
    """Crossing parameters of traces with translated edges, plus degeneracy flags."""
    den = d[:, None, 0] * ee[None, :, 1] - d[:, None, 1] * ee[None, :, 0]
    rx = ea[None, :, 0] - p0[:, None, 0]
    ry = ea[None, :, 1] - p0[:, None, 1]
    par = np.abs(den) < 1e-15
    ta = rx * d[:, None, 0] + ry * d[:, None, 1]
    tb = ta + ee[None, :, 0] * d[:, None, 0] + ee[None, :, 1] * d[:, None, 1]
    overlap = (np.maximum(ta, tb) >= 0.0) & (np.minimum(ta, tb) <= 1.0)
    collinear = par & (np.abs(rx * d[:, None, 1] - ry * d[:, None, 0]) < 1e-15) & overlap
    with np.errstate(divide="ignore", invalid="ignore"):
        s = (rx * ee[None, :, 1] - ry * ee[None, :, 0]) / den
        u = (rx * d[:, None, 1] - ry * d[:, None, 0]) / den
    ok = (~par) & (s > 0.0) & (s < 1.0) & (u >= -_COINCIDE) & (u <= 1.0 + _COINCIDE)
    vertex = ok & ((np.abs(u) <= _COINCIDE) | (np.abs(u - 1.0) <= _COINCIDE))
    flag = vertex.any(axis=1) | collinear.any(axis=1)
    params = np.where(ok, s, np.nan)
    params.sort(axis=1)
    return params, flag


def _inside_numpy(px, py, poly, torus):
    if torus:
        return _pip_numpy(np.mod(px, 1.0), np.mod(py, 1.0), poly)
    inworld = (px >= 0.0) & (px <= 1.0) & (py >= 0.0) & (py <= 1.0)
    return inworld & _pip_numpy(px, py, poly)


def _midpoint_counts(p0, d, params, poly, torus):
    """Membership at every sub-interval midpoint (handles degenerate traces)."""
    nb = len(p0)
    params = np.concatenate([np.zeros((nb, 1)), params, np.ones((nb, 1))], axis=1)
    params.sort(axis=1)
    left, right = params[:, :-1], params[:, 1:]
    valid = np.isfinite(left) & np.isfinite(right) & (right - left > 1e-14)
    mid = np.where(valid, 0.5 * (left + right), 0.0)
    inside = _inside_numpy(p0[:, None, 0] + mid * d[:, None, 0], p0[:, None, 1] + mid * d[:, None, 1], poly, torus)
    ncomp = np.zeros(nb, dtype=np.int64)
    tv = np.zeros(nb, dtype=np.int64)
    for i in range(nb):
        seq = inside[i][valid[i]]
        if len(seq):
            tv[i] = np.count_nonzero(seq[1:] != seq[:-1])
            ncomp[i] = int(seq[0]) + np.count_nonzero(seq[1:] & ~seq[:-1])
    return ncomp, tv


def trace_crossings_numpy(xs, vs, poly, torus, chunk=256):
    """Exact component / jump counts of ``{s in [0, 1] : x + s v in S}``.

    Membership flips at every transversal edge crossing, so one
    point-in-polygon test per trace suffices; traces touching a vertex, running
    along an edge or with near-coincident crossings use midpoint tests on every
    sub-interval instead.

    Returns ``(n_components, total_variation, flagged)`` integer arrays.
    """
    xs = np.asarray(xs, dtype=np.float64)
    vs = np.asarray(vs, dtype=np.float64)
    poly = np.asarray(poly, dtype=np.float64)
    ntr = len(xs)
    ncomp = np.zeros(ntr, dtype=np.int64)
    tv = np.zeros(ntr, dtype=np.int64)
    flag = np.zeros(ntr, dtype=np.int64)
    if len(poly) < 3:
        return ncomp, tv, flag
    offs = _offsets(torus)
    e = np.roll(poly, -1, axis=0) - poly
    ea = (poly[None, :, :] + offs[:, None, :]).reshape(-1, 2)
    ee = np.broadcast_to(e[None, :, :], (len(offs), len(e), 2)).reshape(-1, 2)
    for lo in range(0, ntr, chunk):
        hi = min(ntr, lo + chunk)
        p0, d = xs[lo:hi], vs[lo:hi]
        params, fl = _intersections(p0, d, ea, ee)
        k = np.sum(np.isfinite(params), axis=1)
        full = np.concatenate([np.zeros((hi - lo, 1)), params, np.ones((hi - lo, 1))], axis=1)
        full.sort(axis=1)
        gaps = np.diff(full, axis=1)
        tiny = np.any(np.isfinite(gaps) & (gaps <= 1e-14), axis=1)
        hard = fl | tiny
        # first sub-interval midpoint
        first = np.where(k > 0, params[:, 0], 1.0)
        mid = 0.5 * first
        m0 = _inside_numpy(p0[:, 0] + mid * d[:, 0], p0[:, 1] + mid * d[:, 1], poly, torus)
        c = np.where(m0, 1 + k // 2, (k + 1) // 2)
        ncomp[lo:hi] = c
        tv[lo:hi] = k
        flag[lo:hi] = fl.astype(np.int64)
        if hard.any():
            idx = np.flatnonzero(hard)
            c2, t2 = _midpoint_counts(p0[idx], d[idx], params[idx], poly, torus)
            ncomp[lo + idx] = c2
            tv[lo + idx] = t2
    return ncomp, tv, flag


@njit(cache=True)
def _pip_numba(px, py, poly):
    nv = poly.shape[0]
    inside = False
    for k in range(nv):
        ax = poly[k, 0]
        ay = poly[k, 1]
        bx = poly[(k + 1) % nv, 0]
        by = poly[(k + 1) % nv, 1]
        if (ay > py) != (by > py):
            xint = ax + (py - ay) * (bx - ax) / (by - ay)
            if px < xint:
                inside = not inside
    return inside


@njit(cache=True)
def _trace_one(p0x, p0y, dx, dy, poly, offs, torus, buf):
    nv = poly.shape[0]
    nb = 0
    flagged = 0
    buf[nb] = 0.0
    nb += 1
    bx0 = min(p0x, p0x + dx) - 1e-9
    bx1 = max(p0x, p0x + dx) + 1e-9
    by0 = min(p0y, p0y + dy) - 1e-9
    by1 = max(p0y, p0y + dy) + 1e-9
    px0 = np.min(poly[:, 0])
    px1 = np.max(poly[:, 0])
    py0 = np.min(poly[:, 1])
    py1 = np.max(poly[:, 1])
    for o in range(offs.shape[0]):
        # edges of a translate whose bounding box misses the segment cannot cross it
        if px1 + offs[o, 0] < bx0 or px0 + offs[o, 0] > bx1 or py1 + offs[o, 1] < by0 or py0 + offs[o, 1] > by1:
            continue
        for k in range(nv):
            ax = poly[k, 0] + offs[o, 0]
            ay = poly[k, 1] + offs[o, 1]
            ex = poly[(k + 1) % nv, 0] - poly[k, 0]
            ey = poly[(k + 1) % nv, 1] - poly[k, 1]
            den = dx * ey - dy * ex
            rx = ax - p0x
            ry = ay - p0y
            if abs(den) < 1e-15:
                if abs(rx * dy - ry * dx) < 1e-15:
                    ta = rx * dx + ry * dy
                    tb = ta + ex * dx + ey * dy
                    if max(ta, tb) >= 0.0 and min(ta, tb) <= 1.0:
                        flagged = 1
                continue
            s = (rx * ey - ry * ex) / den
            u = (rx * dy - ry * dx) / den
            if s > 0.0 and s < 1.0 and u >= -1e-12 and u <= 1.0 + 1e-12:
                if abs(u) <= 1e-12 or abs(u - 1.0) <= 1e-12:
                    flagged = 1
                buf[nb] = s
                nb += 1
    buf[nb] = 1.0
    nb += 1
    params = np.sort(buf[:nb])
    ncomp = 0
    tv = 0
    have_prev = False
    prev = False
    for q in range(nb - 1):
        lo = params[q]
        hi = params[q + 1]
        if hi - lo <= 1e-14:
            continue
        mid = 0.5 * (lo + hi)
        px = p0x + mid * dx
        py = p0y + mid * dy
        if torus:
            px = px - np.floor(px)
            py = py - np.floor(py)
            ins = _pip_numba(px, py, poly)
        else:
            if px < 0.0 or px > 1.0 or py < 0.0 or py > 1.0:
                ins = False
            else:
                ins = _pip_numba(px, py, poly)
        if not have_prev:
            if ins:
                ncomp += 1
            have_prev = True
        else:
            if ins != prev:
                tv += 1
                if ins:
                    ncomp += 1
        prev = ins
    return ncomp, tv, flagged


@njit(cache=True)
def _trace_crossings_numba(xs, vs, poly, offs, torus):
    ntr = xs.shape[0]
    ncomp = np.zeros(ntr, dtype=np.int64)
    tv = np.zeros(ntr, dtype=np.int64)
    flag = np.zeros(ntr, dtype=np.int64)
    buf = np.empty(poly.shape[0] * offs.shape[0] + 2)
    for i in range(ntr):
        c, t, f = _trace_one(xs[i, 0], xs[i, 1], vs[i, 0], vs[i, 1], poly, offs, torus, buf)
        ncomp[i] = c
        tv[i] = t
        flag[i] = f
    return ncomp, tv, flag


def trace_crossings_numba(xs, vs, poly, torus):
    xs = np.ascontiguousarray(xs, dtype=np.float64)
    vs = np.ascontiguousarray(vs, dtype=np.float64)
    poly = np.ascontiguousarray(poly, dtype=np.float64)
    if len(poly) < 3:
        z = np.zeros(len(xs), dtype=np.int64)
        return z, z.copy(), z.copy()
    return _trace_crossings_numba(xs, vs, poly, _offsets(torus), bool(torus))


if USE_NUMBA:
    lse_rows = lse_rows_numba
    gibbs_rows = gibbs_rows_numba
    log_matmul = log_matmul_numba
    maxplus_extend = maxplus_extend_numba
    edge_slopes = edge_slopes_numba
    trace_crossings = trace_crossings_numba
    BACKEND = "numba"
else:
    lse_rows = lse_rows_numpy
    gibbs_rows = gibbs_rows_numpy
    log_matmul = log_matmul_numpy
    maxplus_extend = maxplus_extend_numpy
    edge_slopes = edge_slopes_numpy
    trace_crossings = trace_crossings_numpy
    BACKEND = "numpy"
