"""Minimal reverse-mode tape on float64 numpy arrays.

A Var wraps a value plus a backward closure; ops build the tape as they
run.  Only the operations the package's fixed network topologies need are
provided, each with a hand-derived vector-Jacobian product.  Point-feature
tensors are (..., n, c); pooling ops reduce the -2 (point) axis so the same
code serves per-cloud and batched processing.
"""

from __future__ import annotations

import numpy as np

from ..errors import EmptyInput, LabelOutOfRange, ShapeMismatch
from . import kernels


class Var:
    """Tape node: float64 value, accumulated gradient, backward closure."""

    __slots__ = ("value", "grad", "_parents", "_backward")

    def __init__(self, value, parents=(), backward=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self._parents = tuple(parents)
        self._backward = backward

    @property
    def shape(self):
        return self.value.shape

    def item(self) -> float:
        return float(self.value)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Accumulate gradients of this (scalar or array) node's sum."""
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.value)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def _accum(node: Var, g: np.ndarray):
    if node.grad is None:
        # copy: g may be a view into (or alias of) another node's buffer
        node.grad = np.array(g, dtype=np.float64)
    else:
        node.grad += g


def _accum_owned(node: Var, g: np.ndarray):
    """Accumulate a gradient buffer the caller owns exclusively (no copy)."""
    if node.grad is None:
        node.grad = g
    else:
        node.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a gradient back to the shape it was broadcast from."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise / arithmetic
# ---------------------------------------------------------------------------

def add(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    out = Var(a.value + b.value, parents=(a, b))

    def backward(g):
        _accum(a, _unbroadcast(g, a.value.shape))
        _accum(b, _unbroadcast(g, b.value.shape))

    out._backward = backward
    return out


def sub(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    out = Var(a.value - b.value, parents=(a, b))

    def backward(g):
        _accum(a, _unbroadcast(g, a.value.shape))
        _accum(b, -_unbroadcast(g, b.value.shape))

    out._backward = backward
    return out


def mul(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    out = Var(a.value * b.value, parents=(a, b))

    def backward(g):
        _accum(a, _unbroadcast(g * b.value, a.value.shape))
        _accum(b, _unbroadcast(g * a.value, b.value.shape))

    out._backward = backward
    return out


def scale(a, factor: float) -> Var:
    a = as_var(a)
    out = Var(a.value * factor, parents=(a,))

    def backward(g):
        _accum(a, g * factor)

    out._backward = backward
    return out


def mean_all(a) -> Var:
    a = as_var(a)
    out = Var(a.value.mean(), parents=(a,))

    def backward(g):
        _accum(a, np.full_like(a.value, g / a.value.size))

    out._backward = backward
    return out


# ---------------------------------------------------------------------------
# network building blocks
# ---------------------------------------------------------------------------

def affine(x, w, b) -> Var:
    """x @ W + b over the last axis."""
    x, w, b = as_var(x), as_var(w), as_var(b)
    ci, co = w.value.shape
    if x.value.shape[-1] != ci:
        raise ShapeMismatch(
            f"input dim {x.value.shape[-1]} vs weight rows {ci}"
        )
    lead = x.value.shape[:-1]
    # flatten leading axes: one large GEMM beats many small batched ones
    x2 = np.ascontiguousarray(x.value).reshape(-1, ci)
    val = x2 @ w.value
    val += b.value
    out = Var(val.reshape(lead + (co,)), parents=(x, w, b))

    def backward(g):
        g2 = np.ascontiguousarray(g).reshape(-1, co)
        _accum_owned(x, (g2 @ w.value.T).reshape(lead + (ci,)))
        _accum_owned(w, x2.T @ g2)
        _accum_owned(b, g2.sum(axis=0))

    out._backward = backward
    return out


def relu(x) -> Var:
    x = as_var(x)
    val, mask = kernels.relu_fwd(np.ascontiguousarray(x.value))
    out = Var(val, parents=(x,))

    def backward(g):
        _accum_owned(x, kernels.relu_bwd(np.ascontiguousarray(g), mask))

    out._backward = backward
    return out


def batchnorm(
    x,
    gamma,
    beta,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    mode: str = "infer",
    momentum: float = 0.9,
    eps: float = 1e-5,
) -> Var:
    """Per-channel normalization over every axis except the last.

    Train mode normalizes with batch statistics and updates the running
    arrays in place (running <- momentum*running + (1-momentum)*batch, with
    biased batch variance).  Infer mode uses the running statistics only.
    """
    x, gamma, beta = as_var(x), as_var(gamma), as_var(beta)
    c = x.value.shape[-1]
    if gamma.value.shape != (c,) or beta.value.shape != (c,):
        raise ShapeMismatch(f"BN affine parameters must have shape ({c},)")
    shape = x.value.shape
    x2 = np.ascontiguousarray(x.value).reshape(-1, c)
    rows = x2.shape[0]
    if mode == "train":
        m, v = kernels.bn_stats(x2)
        running_mean *= momentum
        running_mean += (1.0 - momentum) * m
        running_var *= momentum
        running_var += (1.0 - momentum) * v
    elif mode == "infer":
        m = running_mean
        v = running_var
    else:
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    inv_std = 1.0 / np.sqrt(v + eps)
    xhat, val = kernels.bn_fwd_assembly(x2, m, inv_std, gamma.value, beta.value)
    out = Var(val.reshape(shape), parents=(x, gamma, beta))

    if mode == "train":

        def backward(g):
            g2 = np.ascontiguousarray(g).reshape(-1, c)
            # dx = inv_std*(dxhat - mean(dxhat) - xhat*mean(dxhat*xhat))
            dbeta = g2.sum(axis=0)
            dgamma = np.einsum("nc,nc->c", g2, xhat)
            s1 = gamma.value * dbeta / rows
            s2 = gamma.value * dgamma / rows
            dx = kernels.bn_bwd_assembly(g2, xhat, gamma.value, inv_std, s1, s2)
            _accum_owned(x, dx.reshape(shape))
            _accum_owned(gamma, dgamma)
            _accum_owned(beta, dbeta)

    else:

        def backward(g):
            g2 = np.ascontiguousarray(g).reshape(-1, c)
            dx = np.empty_like(g2)
            np.multiply(g2, gamma.value * inv_std, out=dx)
            _accum_owned(x, dx.reshape(shape))
            _accum_owned(gamma, np.einsum("nc,nc->c", g2, xhat))
            _accum_owned(beta, g2.sum(axis=0))

    out._backward = backward
    return out


def maxpool_points(x) -> Var:
    """Column-wise max over the point axis (-2).

    The gradient routes to the first (lowest-index) argmax row per channel.
    """
    x = as_var(x)
    if x.value.ndim < 2:
        raise ShapeMismatch("maxpool expects at least two axes")
    k = x.value.shape[-2]
    if k == 0:
        raise EmptyInput("maxpool over zero points")
    shape = x.value.shape
    c = shape[-1]
    x3 = np.ascontiguousarray(x.value).reshape(-1, k, c)
    vals, idx = kernels.maxpool_fwd(x3)
    out = Var(vals.reshape(shape[:-2] + (c,)), parents=(x,))

    def backward(g):
        g2 = np.ascontiguousarray(g).reshape(-1, c)
        gx = kernels.maxpool_bwd(g2, idx, k)
        _accum_owned(x, gx.reshape(shape))

    out._backward = backward
    return out


def concat_broadcast(local, glob) -> Var:
    """[local ; glob] per point: glob is replicated onto every row."""
    local, glob = as_var(local), as_var(glob)
    lv, gv = local.value, glob.value
    if lv.ndim < 2:
        raise ShapeMismatch("local features must be (..., n, c1)")
    if gv.shape[:-1] != lv.shape[:-2]:
        raise ShapeMismatch(
            f"global shape {gv.shape} does not match local batch {lv.shape[:-2]}"
        )
    c1 = lv.shape[-1]
    tiled = np.broadcast_to(gv[..., None, :], lv.shape[:-1] + (gv.shape[-1],))
    out = Var(np.concatenate([lv, tiled], axis=-1), parents=(local, glob))

    def backward(g):
        _accum(local, g[..., :c1])
        _accum(glob, g[..., c1:].sum(axis=-2))

    out._backward = backward
    return out


def concat_affine(local, glob, w, b) -> Var:
    """affine(concat_broadcast(local, glob), w, b) without materializing
    the concatenation: [L;G] @ W = L @ W_top + G @ W_bottom."""
    local, glob, w, b = as_var(local), as_var(glob), as_var(w), as_var(b)
    lv, gv = local.value, glob.value
    c1 = lv.shape[-1]
    c2 = gv.shape[-1]
    ci, co = w.value.shape
    if ci != c1 + c2:
        raise ShapeMismatch(f"weight rows {ci} != {c1}+{c2}")
    if gv.shape[:-1] != lv.shape[:-2]:
        raise ShapeMismatch(
            f"global shape {gv.shape} does not match local batch {lv.shape[:-2]}"
        )
    lead = lv.shape[:-2]
    n = lv.shape[-2]
    nlead = int(np.prod(lead)) if lead else 1
    w_top = w.value[:c1]
    w_bot = w.value[c1:]
    l2 = np.ascontiguousarray(lv).reshape(-1, c1)
    g2 = np.ascontiguousarray(gv).reshape(nlead, c2)
    val = (l2 @ w_top).reshape(nlead, n, co)
    val += (g2 @ w_bot + b.value)[:, None, :]
    out = Var(val.reshape(lead + (n, co)), parents=(local, glob, w, b))

    def backward(g):
        g3 = np.ascontiguousarray(g).reshape(nlead, n, co)
        gf = g3.reshape(-1, co)
        gsum = g3.sum(axis=1)
        _accum_owned(local, (gf @ w_top.T).reshape(lv.shape))
        _accum_owned(glob, (gsum @ w_bot.T).reshape(gv.shape))
        gw = np.empty_like(w.value)
        np.matmul(l2.T, gf, out=gw[:c1])
        np.matmul(g2.T, gsum, out=gw[c1:])
        _accum_owned(w, gw)
        _accum_owned(b, gsum.sum(axis=0))

    out._backward = backward
    return out


def softmax_xent(logits, labels) -> Var:
    """Per-sample cross-entropy; returns (...,) losses.

    Gradient wrt logits is softmax - onehot.
    """
    logits = as_var(logits)
    lv = logits.value
    k = lv.shape[-1]
    if k < 2:
        raise ShapeMismatch("need at least two classes")
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != lv.shape[:-1]:
        raise ShapeMismatch(f"labels shape {labels.shape} vs logits {lv.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise LabelOutOfRange(f"labels must lie in [0, {k})")
    shifted = lv - lv.max(axis=-1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=-1))
    picked = np.take_along_axis(shifted, labels[..., None], axis=-1)[..., 0]
    out = Var(logz - picked, parents=(logits,))

    def backward(g):
        soft = np.exp(shifted) / np.exp(shifted).sum(axis=-1, keepdims=True)
        onehot = np.zeros_like(lv)
        np.put_along_axis(onehot, labels[..., None], 1.0, axis=-1)
        _accum(logits, g[..., None] * (soft - onehot))

    out._backward = backward
    return out


def edge_features(x, idx) -> Var:
    """[x_i ; x_j - x_i] per neighbor: (..., n, c) with (..., n, k) ->
    (..., n, k, 2c), fused gather/subtract/concat."""
    x = as_var(x)
    xv = x.value
    idx = np.asarray(idx, dtype=np.int64)
    c = xv.shape[-1]
    if xv.ndim == 2:
        x2, idx2 = xv, idx
        lead = ()
    elif xv.ndim == 3:
        b, n = xv.shape[:2]
        x2 = np.ascontiguousarray(xv).reshape(-1, c)
        idx2 = (idx + (np.arange(b) * n)[:, None, None]).reshape(-1, idx.shape[-1])
        lead = (b,)
    else:
        raise ShapeMismatch("edge_features expects (n, c) or (B, n, c)")
    k = idx2.shape[-1]
    val = kernels.edge_features_fwd(np.ascontiguousarray(x2), idx2)
    out = Var(val.reshape(lead + (-1, k, 2 * c)), parents=(x,))

    def backward(g):
        g2 = np.ascontiguousarray(g).reshape(-1, k, 2 * c)
        gx = kernels.edge_features_bwd(g2, idx2, x2.shape[0], c)
        _accum_owned(x, gx.reshape(xv.shape))

    out._backward = backward
    return out


def gather_rows(x, idx) -> Var:
    """Neighbor gather: (..., n, c) with (..., n, k) -> (..., n, k, c)."""
    x = as_var(x)
    xv = x.value
    idx = np.asarray(idx, dtype=np.int64)
    if xv.ndim == 2:
        out_val = xv[idx]

        def backward(g):
            gx = np.zeros_like(xv)
            np.add.at(gx, idx.ravel(), g.reshape(-1, xv.shape[-1]))
            _accum(x, gx)

    elif xv.ndim == 3:
        b = xv.shape[0]
        bidx = np.arange(b)[:, None, None]
        out_val = xv[bidx, idx]

        def backward(g):
            gx = np.zeros_like(xv)
            flat = idx + (np.arange(b) * xv.shape[1])[:, None, None]
            np.add.at(
                gx.reshape(-1, xv.shape[-1]),
                flat.ravel(),
                g.reshape(-1, xv.shape[-1]),
            )
            _accum(x, gx)

    else:
        raise ShapeMismatch("gather_rows expects (n, c) or (B, n, c)")
    out = Var(out_val, parents=(x,))
    out._backward = backward
    return out


def expand_point_axis(x, k: int) -> Var:
    """(..., n, c) -> (..., n, k, c) by replication along a new axis."""
    x = as_var(x)
    xv = x.value
    out = Var(
        np.broadcast_to(xv[..., None, :], xv.shape[:-1] + (k, xv.shape[-1])).copy(),
        parents=(x,),
    )

    def backward(g):
        _accum(x, g.sum(axis=-2))

    out._backward = backward
    return out


def concat_lastdim(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    if a.value.shape[:-1] != b.value.shape[:-1]:
        raise ShapeMismatch(
            f"cannot concat {a.value.shape} with {b.value.shape}"
        )
    c1 = a.value.shape[-1]
    out = Var(np.concatenate([a.value, b.value], axis=-1), parents=(a, b))

    def backward(g):
        _accum(a, g[..., :c1])
        _accum(b, g[..., c1:])

    out._backward = backward
    return out


# ---------------------------------------------------------------------------
# reconstruction losses
# ---------------------------------------------------------------------------

def chamfer_loss(recon, target) -> Var:
    """Per-cloud Chamfer values, differentiable wrt the reconstruction.

    recon: Var (B, n, 3) or (n, 3); target: constant array of matching
    leading shape.  Returns (B,) (or scalar shape () for single clouds).
    """
    recon = as_var(recon)
    rv = recon.value
    tv = np.asarray(target, dtype=np.float64)
    single = rv.ndim == 2
    r = rv[None] if single else rv
    t = tv[None] if single else tv
    if r.shape[0] != t.shape[0]:
        raise ShapeMismatch("batch sizes differ")
    rr = np.sum(r * r, axis=-1)
    tt = np.sum(t * t, axis=-1)
    d2 = r @ t.transpose(0, 2, 1)
    d2 *= -2.0
    d2 += rr[:, :, None]
    d2 += tt[:, None, :]
    np.maximum(d2, 0.0, out=d2)
    row_min, nn_rt, col_min, nn_tr = kernels.chamfer_argmins(d2)
    b_ix = np.arange(r.shape[0])[:, None]
    vals = row_min.mean(axis=1) + col_min.mean(axis=1)
    out = Var(vals[0] if single else vals, parents=(recon,))

    def backward(g):
        gb = np.asarray(g).reshape(-1)
        n_r, n_t = r.shape[1], t.shape[1]
        grad = (2.0 / n_r) * (r - t[b_ix, nn_rt]) * gb[:, None, None]
        # target-side term: scatter back onto the matched recon points
        contrib = (2.0 / n_t) * (r[b_ix, nn_tr] - t) * gb[:, None, None]
        for bi in range(r.shape[0]):
            np.add.at(grad[bi], nn_tr[bi], contrib[bi])
        _accum(recon, grad[0] if single else grad)

    out._backward = backward
    return out


def swd_loss(recon, target, directions) -> Var:
    """Per-cloud sliced W2^2 values over fixed directions, diff wrt recon."""
    recon = as_var(recon)
    rv = recon.value
    tv = np.asarray(target, dtype=np.float64)
    dirs = np.asarray(directions, dtype=np.float64)
    single = rv.ndim == 2
    r = rv[None] if single else rv
    t = tv[None] if single else tv
    if r.shape != t.shape:
        raise ShapeMismatch("recon and target shapes differ")
    n, p = r.shape[1], dirs.shape[0]
    pr = r @ dirs.T
    pt = t @ dirs.T
    order_r = np.argsort(pr, axis=1, kind="stable")
    diff = np.take_along_axis(pr, order_r, axis=1) - np.sort(pt, axis=1)
    vals = np.mean(diff**2, axis=(1, 2))
    out = Var(vals[0] if single else vals, parents=(recon,))

    def backward(g):
        gb = np.asarray(g).reshape(-1)
        gp = np.zeros_like(pr)
        np.put_along_axis(gp, order_r, (2.0 / (n * p)) * diff, axis=1)
        gp *= gb[:, None, None]
        grad = gp @ dirs
        _accum(recon, grad[0] if single else grad)

    out._backward = backward
    return out
