"""Pure-Python (numpy) implementations of the hot kernels.

Signatures mirror the compiled module exactly; see ``_ckernels.pyx``.
"""

import numpy as np

BACKEND = "python"


# ---------------------------------------------------------------------------
# exact squared Euclidean distance transform


def _envelope_lines(f):
    """1-D squared distance transform of every row of ``f`` at once.

    Lower envelope of parabolas, run in lockstep over all rows; rows keep
    their own envelope length. Infinite entries are never added to an
    envelope, so a row without finite entries stays infinite.
    """
    n_lines, n = f.shape
    out = np.full((n_lines, n), np.inf)
    if n == 0 or n_lines == 0:
        return out
    v = np.zeros((n_lines, n), dtype=np.int64)
    z = np.empty((n_lines, n + 1))
    k = np.full(n_lines, -1, dtype=np.int64)
    rows = np.arange(n_lines)
    for q in range(n):
        fq = f[:, q]
        active = np.isfinite(fq)
        if not active.any():
            continue
        start = active & (k < 0)
        if start.any():
            r = rows[start]
            k[r] = 0
            v[r, 0] = q
            z[r, 0] = -np.inf
            z[r, 1] = np.inf
        pending = active & ~start
        while pending.any():
            r = rows[pending]
            vk = v[r, k[r]]
            s_r = ((fq[r] + q * q) - (f[r, vk] + vk * vk)) / (2.0 * (q - vk))
            pop = s_r <= z[r, k[r]]
            if pop.any():
                pr = r[pop]
                k[pr] -= 1
                gone = pr[k[pr] < 0]
                if gone.size:
                    # everything popped: q starts a fresh envelope
                    k[gone] = 0
                    v[gone, 0] = q
                    z[gone, 0] = -np.inf
                    z[gone, 1] = np.inf
                    pending[gone] = False
            keep = r[~pop]
            if keep.size:
                kk = k[keep] + 1
                k[keep] = kk
                v[keep, kk] = q
                z[keep, kk] = s_r[~pop]
                z[keep, kk + 1] = np.inf
                pending[keep] = False
    has = k >= 0
    if not has.any():
        return out
    r_all = rows[has]
    kk = np.zeros(r_all.size, dtype=np.int64)
    for q in range(n):
        while True:
            adv = z[r_all, kk + 1] < q
            if not adv.any():
                break
            kk[adv] += 1
        vk = v[r_all, kk]
        out[r_all, q] = (q - vk) ** 2 + f[r_all, vk]
    return out


def edt_squared(mask):
    """Squared distance (pixels) from every cell to the nearest True cell."""
    mask = np.asarray(mask, dtype=bool)
    f = np.where(mask, 0.0, np.inf)
    cols = _envelope_lines(np.ascontiguousarray(f.T)).T
    return _envelope_lines(np.ascontiguousarray(cols))


# ---------------------------------------------------------------------------
# Gaussian-kernel score surrogate


def kernel_max(qx, qy, px, py, ps, sigma, s_min):
    qx = np.asarray(qx, dtype=float)
    qy = np.asarray(qy, dtype=float)
    out = np.full(qx.shape[0], float(s_min))
    if len(px) == 0 or qx.shape[0] == 0:
        return out
    px = np.asarray(px, dtype=float)
    py = np.asarray(py, dtype=float)
    lift = np.asarray(ps, dtype=float) - s_min
    inv = 1.0 / (2.0 * sigma * sigma)
    chunk = max(1, 1_000_000 // px.shape[0])
    for s in range(0, qx.shape[0], chunk):
        dx = qx[s:s + chunk, None] - px[None, :]
        dy = qy[s:s + chunk, None] - py[None, :]
        val = s_min + lift[None, :] * np.exp(-(dx * dx + dy * dy) * inv)
        out[s:s + chunk] = np.maximum(out[s:s + chunk], val.max(axis=1))
    return out


# ---------------------------------------------------------------------------
# greedy MAP inference


def _spatial(d, edges, weights, k3, nms, tau_nms):
    d = np.asarray(d, dtype=float)
    if nms:
        return np.where(d < tau_nms, -np.inf, 0.0)
    return k3 * weights[np.searchsorted(edges, d, side="right")]


def greedy_select(xy, static, eligible, edges, weights, k3, nms, tau_nms):
    """Greedy maximization of the detection-set objective.

    Returns (selected indices in acceptance order, marginal gain of each).
    Gains include the change in existing members' spatial terms when their
    nearest neighbor moves closer.
    """
    xy = np.asarray(xy, dtype=float)
    static = np.asarray(static, dtype=float)
    edges = np.asarray(edges, dtype=float)
    weights = np.asarray(weights, dtype=float)
    n = static.shape[0]
    cutoff = float(tau_nms) if nms else float(edges[-1]) if edges.size else 0.0
    s_inf = float(_spatial(np.inf, edges, weights, k3, nms, tau_nms))

    open_ = np.asarray(eligible, dtype=bool).copy()
    gains = np.where(open_, static + s_inf, -np.inf)
    dmin = np.full(n, np.inf)
    members = []
    nn = []  # nearest-member distance per member, aligned with ``members``
    order, accepted = [], []
    while True:
        if not open_.any():
            break
        masked = np.where(open_, gains, -np.inf)
        t = int(np.argmax(masked))
        g = masked[t]
        if not g > 0:
            break
        order.append(t)
        accepted.append(float(g))
        open_[t] = False

        ex = xy[:, 0] - xy[t, 0]
        ey = xy[:, 1] - xy[t, 1]
        d_t = np.sqrt(ex * ex + ey * ey)
        if members:
            m_idx = np.asarray(members)
            nn_arr = np.minimum(np.asarray(nn), d_t[m_idx])
            nn = list(nn_arr)
        nn.append(dmin[t])
        members.append(t)
        np.minimum(dmin, d_t, out=dmin)

        aff = np.flatnonzero(open_ & (d_t < 2.0 * cutoff))
        if aff.size == 0:
            continue
        m_idx = np.asarray(members)
        nn_arr = np.asarray(nn)
        dx = xy[aff, 0, None] - xy[None, m_idx, 0]
        dy = xy[aff, 1, None] - xy[None, m_idx, 1]
        dcm = np.sqrt(dx * dx + dy * dy)
        closer = (dcm < nn_arr[None, :]) & (dcm < cutoff)
        old = _spatial(nn_arr, edges, weights, k3, nms, tau_nms)
        with np.errstate(invalid="ignore"):
            delta = np.where(closer, _spatial(dcm, edges, weights, k3, nms, tau_nms) - old[None, :], 0.0)
        gains[aff] = (
            static[aff] + _spatial(dmin[aff], edges, weights, k3, nms, tau_nms) + delta.sum(axis=1)
        )
    return np.asarray(order, dtype=np.int64), np.asarray(accepted, dtype=float)
