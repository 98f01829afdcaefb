# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels. Behavior matches ``_pure.py`` function for function."""

import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY, exp, sqrt, isfinite

cnp.import_array()

BACKEND = "cython"


cdef void _envelope(const double* f, double* out, Py_ssize_t n, Py_ssize_t stride,
                    Py_ssize_t* v, double* z) noexcept nogil:
    cdef Py_ssize_t q, k = -1, vk
    cdef double s, fq
    for q in range(n):
        fq = f[q * stride]
        if not isfinite(fq):
            continue
        if k < 0:
            k = 0
            v[0] = q
            z[0] = -INFINITY
            z[1] = INFINITY
            continue
        while True:
            vk = v[k]
            s = ((fq + q * q) - (f[vk * stride] + vk * vk)) / (2.0 * (q - vk))
            if s <= z[k]:
                k -= 1
                if k < 0:
                    break
            else:
                break
        if k < 0:
            k = 0
            v[0] = q
            z[0] = -INFINITY
            z[1] = INFINITY
            continue
        k += 1
        v[k] = q
        z[k] = s
        z[k + 1] = INFINITY
    if k < 0:
        for q in range(n):
            out[q * stride] = INFINITY
        return
    k = 0
    for q in range(n):
        while z[k + 1] < q:
            k += 1
        vk = v[k]
        out[q * stride] = (q - vk) * (q - vk) + f[vk * stride]


def edt_squared(mask):
    """Squared distance (pixels) from every cell to the nearest True cell."""
    cdef cnp.ndarray[cnp.uint8_t, ndim=2, mode="c"] m = np.ascontiguousarray(mask, dtype=np.uint8)
    cdef Py_ssize_t rows = m.shape[0], cols = m.shape[1], i, j
    cdef cnp.ndarray[double, ndim=2, mode="c"] f = np.empty((rows, cols))
    cdef cnp.ndarray[double, ndim=2, mode="c"] g = np.empty((rows, cols))
    cdef cnp.ndarray[double, ndim=2, mode="c"] out = np.empty((rows, cols))
    cdef Py_ssize_t longest = max(rows, cols)
    cdef cnp.ndarray[Py_ssize_t, ndim=1] v = np.empty(longest + 1, dtype=np.intp)
    cdef cnp.ndarray[double, ndim=1] z = np.empty(longest + 2)
    if rows == 0 or cols == 0:
        return out
    with nogil:
        for i in range(rows):
            for j in range(cols):
                f[i, j] = 0.0 if m[i, j] else INFINITY
        for j in range(cols):
            _envelope(&f[0, j], &g[0, j], rows, cols, &v[0], &z[0])
        for i in range(rows):
            _envelope(&g[i, 0], &out[i, 0], cols, 1, &v[0], &z[0])
    return out


def kernel_max(qx, qy, px, py, ps, double sigma, double s_min):
    cdef const double[:] qxv = np.ascontiguousarray(qx, dtype=float)
    cdef const double[:] qyv = np.ascontiguousarray(qy, dtype=float)
    cdef const double[:] pxv = np.ascontiguousarray(px, dtype=float)
    cdef const double[:] pyv = np.ascontiguousarray(py, dtype=float)
    cdef const double[:] psv = np.ascontiguousarray(ps, dtype=float)
    cdef Py_ssize_t nq = qxv.shape[0], npr = pxv.shape[0], i, j
    out = np.full(nq, s_min)
    cdef double[:] o = out
    cdef double inv = 1.0 / (2.0 * sigma * sigma), best, val, dx, dy
    with nogil:
        for i in range(nq):
            best = s_min
            for j in range(npr):
                dx = qxv[i] - pxv[j]
                dy = qyv[i] - pyv[j]
                val = s_min + (psv[j] - s_min) * exp(-(dx * dx + dy * dy) * inv)
                if val > best:
                    best = val
            o[i] = best
    return out


cdef inline double _spatial(double d, const double[:] edges, const double[:] weights,
                            double k3, bint nms, double tau_nms) noexcept nogil:
    cdef Py_ssize_t b = 0, m = edges.shape[0]
    if nms:
        return -INFINITY if d < tau_nms else 0.0
    while b < m and edges[b] <= d:
        b += 1
    return k3 * weights[b]


def greedy_select(xy, static, eligible, edges, weights, double k3, bint nms, double tau_nms):
    """Greedy maximization of the detection-set objective.

    Returns (selected indices in acceptance order, marginal gain of each).
    """
    cdef const double[:, :] P = np.ascontiguousarray(xy, dtype=float)
    cdef const double[:] st = np.ascontiguousarray(static, dtype=float)
    cdef const double[:] E = np.ascontiguousarray(edges, dtype=float)
    cdef const double[:] Wt = np.ascontiguousarray(weights, dtype=float)
    cdef Py_ssize_t n = st.shape[0], i, j, t, mi, cnt = 0
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] open_arr = np.ascontiguousarray(eligible, dtype=np.uint8).copy()
    cdef unsigned char[:] op = open_arr
    gains_arr = np.empty(n)
    dmin_arr = np.full(n, INFINITY)
    members_arr = np.empty(n, dtype=np.intp)
    nn_arr = np.empty(n)
    order_arr = np.empty(n, dtype=np.intp)
    acc_arr = np.empty(n)
    cdef double[:] gains = gains_arr
    cdef double[:] dmin = dmin_arr
    cdef Py_ssize_t[:] members = members_arr
    cdef double[:] nn = nn_arr
    cdef Py_ssize_t[:] order = order_arr
    cdef double[:] acc = acc_arr
    cdef double cutoff, s_inf, best, g, d, dx, dy, tx, ty, delta, two_cut
    if nms:
        cutoff = tau_nms
    elif E.shape[0] > 0:
        cutoff = E[E.shape[0] - 1]
    else:
        cutoff = 0.0
    two_cut = 2.0 * cutoff
    s_inf = _spatial(INFINITY, E, Wt, k3, nms, tau_nms)
    with nogil:
        for i in range(n):
            gains[i] = st[i] + s_inf if op[i] else -INFINITY
        while True:
            t = -1
            best = -INFINITY
            for i in range(n):
                if op[i] and (t < 0 or gains[i] > best):
                    best = gains[i]
                    t = i
            if t < 0 or not best > 0:
                break
            order[cnt] = t
            acc[cnt] = best
            op[t] = 0
            tx = P[t, 0]
            ty = P[t, 1]
            for j in range(cnt):
                mi = members[j]
                dx = P[mi, 0] - tx
                dy = P[mi, 1] - ty
                d = sqrt(dx * dx + dy * dy)
                if d < nn[j]:
                    nn[j] = d
            members[cnt] = t
            nn[cnt] = dmin[t]
            cnt += 1
            for i in range(n):
                dx = P[i, 0] - tx
                dy = P[i, 1] - ty
                d = sqrt(dx * dx + dy * dy)
                if d < dmin[i]:
                    dmin[i] = d
                if not op[i] or not d < two_cut:
                    continue
                g = st[i] + _spatial(dmin[i], E, Wt, k3, nms, tau_nms)
                for j in range(cnt):
                    mi = members[j]
                    dx = P[i, 0] - P[mi, 0]
                    dy = P[i, 1] - P[mi, 1]
                    d = sqrt(dx * dx + dy * dy)
                    if d < nn[j] and d < cutoff:
                        g += _spatial(d, E, Wt, k3, nms, tau_nms) - _spatial(nn[j], E, Wt, k3, nms, tau_nms)
                gains[i] = g
    return order_arr[:cnt].astype(np.int64), acc_arr[:cnt].copy()
