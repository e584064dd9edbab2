"""Fused inner loops for the hot tape operations.

Each kernel is a single serial pass (deterministic regardless of thread
environment) compiled with numba when available; the pure-numpy fallbacks
compute identical values.  Shapes are pre-flattened by the callers:
point-feature tensors arrive as (rows, channels) or (outer, k, channels).
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a normal install
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return wrap


@njit(cache=True)
def relu_fwd(x):
    out = np.empty_like(x)
    mask = np.empty(x.shape, dtype=np.bool_)
    flat_x = x.ravel()
    flat_o = out.ravel()
    flat_m = mask.ravel()
    for i in range(flat_x.size):
        v = flat_x[i]
        if v > 0.0:
            flat_o[i] = v
            flat_m[i] = True
        else:
            flat_o[i] = 0.0
            flat_m[i] = False
    return out, mask


@njit(cache=True)
def relu_bwd(g, mask):
    gx = np.empty_like(g)
    flat_g = g.ravel()
    flat_m = mask.ravel()
    flat_o = gx.ravel()
    for i in range(flat_g.size):
        flat_o[i] = flat_g[i] if flat_m[i] else 0.0
    return gx


@njit(cache=True)
def maxpool_fwd(x):
    """x: (outer, k, c) -> values (outer, c), argmax rows (outer, c)."""
    outer, k, c = x.shape
    vals = np.empty((outer, c))
    idx = np.empty((outer, c), dtype=np.int64)
    for o in range(outer):
        for j in range(c):
            vals[o, j] = x[o, 0, j]
            idx[o, j] = 0
        for r in range(1, k):
            for j in range(c):
                v = x[o, r, j]
                if v > vals[o, j]:
                    vals[o, j] = v
                    idx[o, j] = r
    return vals, idx


@njit(cache=True)
def maxpool_bwd(g, idx, k):
    outer, c = g.shape
    gx = np.zeros((outer, k, c))
    for o in range(outer):
        for j in range(c):
            gx[o, idx[o, j], j] = g[o, j]
    return gx


@njit(cache=True)
def bn_fwd_assembly(x, m, inv_std, gamma, beta):
    """xhat = (x - m) * inv_std; out = xhat * gamma + beta, one pass."""
    rows, c = x.shape
    xhat = np.empty_like(x)
    out = np.empty_like(x)
    for r in range(rows):
        for j in range(c):
            h = (x[r, j] - m[j]) * inv_std[j]
            xhat[r, j] = h
            out[r, j] = h * gamma[j] + beta[j]
    return xhat, out


@njit(cache=True)
def bn_bwd_assembly(g, xhat, gamma, inv_std, s1, s2):
    """dx = (g*gamma - s1 - xhat*s2) * inv_std in one pass."""
    rows, c = g.shape
    dx = np.empty_like(g)
    for r in range(rows):
        for j in range(c):
            dx[r, j] = (g[r, j] * gamma[j] - s1[j] - xhat[r, j] * s2[j]) * inv_std[j]
    return dx


@njit(cache=True)
def bn_stats(x):
    """Per-channel mean and biased variance of (rows, c) in one pass."""
    rows, c = x.shape
    s = np.zeros(c)
    sq = np.zeros(c)
    for r in range(rows):
        for j in range(c):
            v = x[r, j]
            s[j] += v
            sq[j] += v * v
    mean = s / rows
    var = sq / rows - mean * mean
    for j in range(c):
        if var[j] < 0.0:
            var[j] = 0.0
    return mean, var


@njit(cache=True)
def chamfer_argmins(d2):
    """Row-wise and column-wise argmins of (B, n, m) in one pass."""
    b, n, m = d2.shape
    row_idx = np.empty((b, n), dtype=np.int64)
    col_idx = np.empty((b, m), dtype=np.int64)
    row_min = np.empty((b, n))
    col_min = np.empty((b, m))
    for bi in range(b):
        for j in range(m):
            col_min[bi, j] = np.inf
            col_idx[bi, j] = 0
        for i in range(n):
            best = np.inf
            besti = 0
            for j in range(m):
                v = d2[bi, i, j]
                if v < best:
                    best = v
                    besti = j
                if v < col_min[bi, j]:
                    col_min[bi, j] = v
                    col_idx[bi, j] = i
            row_min[bi, i] = best
            row_idx[bi, i] = besti
    return row_min, row_idx, col_min, col_idx


@njit(cache=True)
def adam_update(p, g, m, v, lr, b1, b2, eps, c1, c2):
    for i in range(p.size):
        gi = g[i]
        m[i] = b1 * m[i] + (1.0 - b1) * gi
        v[i] = b2 * v[i] + (1.0 - b2) * gi * gi
        p[i] -= lr * (m[i] / c1) / (np.sqrt(v[i] / c2) + eps)


@njit(cache=True)
def edge_features_fwd(x, idx):
    """[x_i ; x_j - x_i] for (rows, c) points and (rows, k) neighbors."""
    rows, c = x.shape
    k = idx.shape[1]
    out = np.empty((rows, k, 2 * c))
    for i in range(rows):
        for r in range(k):
            j = idx[i, r]
            for ch in range(c):
                xi = x[i, ch]
                out[i, r, ch] = xi
                out[i, r, c + ch] = x[j, ch] - xi
    return out


@njit(cache=True)
def edge_features_bwd(g, idx, rows, c):
    """Gradient wrt the points for edge_features_fwd."""
    k = idx.shape[1]
    gx = np.zeros((rows, c))
    for i in range(rows):
        for r in range(k):
            j = idx[i, r]
            for ch in range(c):
                ga = g[i, r, ch]
                gb = g[i, r, c + ch]
                gx[i, ch] += ga - gb
                gx[j, ch] += gb
    return gx


# Pure-numpy fallbacks keep the package functional without numba.
if not HAVE_NUMBA:  # pragma: no cover

    def relu_fwd(x):  # noqa: F811
        mask = x > 0
        return np.where(mask, x, 0.0), mask

    def relu_bwd(g, mask):  # noqa: F811
        return np.where(mask, g, 0.0)

    def maxpool_fwd(x):  # noqa: F811
        idx = x.argmax(axis=1)
        vals = np.take_along_axis(x, idx[:, None, :], axis=1)[:, 0, :]
        return vals, idx

    def maxpool_bwd(g, idx, k):  # noqa: F811
        gx = np.zeros((g.shape[0], k, g.shape[1]))
        np.put_along_axis(gx, idx[:, None, :], g[:, None, :], axis=1)
        return gx

    def bn_fwd_assembly(x, m, inv_std, gamma, beta):  # noqa: F811
        xhat = (x - m) * inv_std
        return xhat, xhat * gamma + beta

    def bn_bwd_assembly(g, xhat, gamma, inv_std, s1, s2):  # noqa: F811
        dx = np.empty_like(g)
        np.multiply(g, gamma, out=dx)
        dx -= s1
        dx -= xhat * s2
        dx *= inv_std
        return dx

    def bn_stats(x):  # noqa: F811
        m = x.mean(axis=0)
        v = np.maximum(np.einsum("nc,nc->c", x, x) / len(x) - m * m, 0.0)
        return m, v

    def chamfer_argmins(d2):  # noqa: F811
        row_idx = d2.argmin(axis=2)
        col_idx = d2.argmin(axis=1)
        row_min = np.take_along_axis(d2, row_idx[:, :, None], axis=2)[:, :, 0]
        col_min = np.take_along_axis(d2, col_idx[:, None, :], axis=1)[:, 0, :]
        return row_min, row_idx, col_min, col_idx

    def adam_update(p, g, m, v, lr, b1, b2, eps, c1, c2):  # noqa: F811
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)

    def edge_features_fwd(x, idx):  # noqa: F811
        xi = np.broadcast_to(x[:, None, :], (x.shape[0], idx.shape[1], x.shape[1]))
        xj = x[idx]
        return np.concatenate([xi, xj - xi], axis=-1)

    def edge_features_bwd(g, idx, rows, c):  # noqa: F811
        ga = g[..., :c]
        gb = g[..., c:]
        gx = (ga - gb).sum(axis=1)
        np.add.at(gx, idx.ravel(), gb.reshape(-1, c))
        return gx
