"""Reverse-mode automatic differentiation on numpy arrays.

Tensors store float32 by default; build them from float64 arrays to run
in 64-bit (the mode gradient tests use). Operations executed inside an
active ``Graph`` are recorded on its tape; with no active graph they run
as plain numpy, which keeps inference free of bookkeeping.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .errors import ShapeError, StateError


class Tensor:
    """N-dimensional value with an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_tape")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self._tape = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # Operator sugar; every op routes through the module-level functions.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


class Graph:
    """Tape of one forward pass; activate with a ``with`` block.

    ``backward`` may run once per graph; rerunning without a fresh forward
    pass raises StateError.
    """

    _active: "Graph | None" = None

    def __init__(self):
        self.nodes: list[Tensor] = []
        self.consumed = False
        self._outer = None

    def __enter__(self) -> "Graph":
        self._outer = Graph._active
        Graph._active = self
        return self

    def __exit__(self, *exc):
        Graph._active = self._outer
        return False


def active_graph() -> Graph | None:
    return Graph._active


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _tracked(t: Tensor, g: Graph | None) -> bool:
    return t.requires_grad or (g is not None and t._tape is g)


def _record(out: Tensor, parents: tuple, backward_fn) -> Tensor:
    """Attach the backward closure when a graph is recording."""
    g = Graph._active
    if g is not None and any(_tracked(p, g) for p in parents):
        out._parents = parents
        out._backward = backward_fn
        out._tape = g
        g.nodes.append(out)
    return out


def _reduce_to_shape(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def backward(graph: Graph, loss: Tensor) -> None:
    """Run reverse-mode accumulation from a scalar loss over one tape.

    Fills ``grad`` on every reachable leaf tensor with requires_grad set;
    intermediate gradients are discarded.
    """
    if graph is None or not graph.nodes:
        raise StateError("backward called before any recorded forward pass")
    if graph.consumed:
        raise StateError("graph already consumed; run a new forward pass")
    if loss._tape is not graph:
        raise StateError("loss tensor was not produced under this graph")
    if loss.data.size != 1:
        raise ShapeError(f"loss must be scalar, got shape {loss.data.shape}")

    topo: list[Tensor] = []
    visited: set[int] = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p._tape is graph and id(p) not in visited:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None or node._backward is None:
            continue
        for parent, pg in node._backward(g):
            if pg is None:
                continue
            if parent.requires_grad and parent._backward is None:
                if parent.grad is None:
                    parent.grad = np.zeros_like(parent.data)
                parent.grad += pg.astype(parent.data.dtype, copy=False)
            elif parent._tape is graph:
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    graph.consumed = True
    for node in graph.nodes:
        node._backward = None
        node._parents = ()
    graph.nodes.clear()


# ---------------------------------------------------------------------------
# elementwise and reduction primitives


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data + b.data)

    def back(g):
        return ((a, _reduce_to_shape(g, a.data.shape)), (b, _reduce_to_shape(g, b.data.shape)))

    return _record(out, (a, b), back)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data - b.data)

    def back(g):
        return ((a, _reduce_to_shape(g, a.data.shape)), (b, _reduce_to_shape(-g, b.data.shape)))

    return _record(out, (a, b), back)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data * b.data)

    def back(g):
        return (
            (a, _reduce_to_shape(g * b.data, a.data.shape)),
            (b, _reduce_to_shape(g * a.data, b.data.shape)),
        )

    return _record(out, (a, b), back)


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data / b.data)

    def back(g):
        return (
            (a, _reduce_to_shape(g / b.data, a.data.shape)),
            (b, _reduce_to_shape(-g * a.data / (b.data**2), b.data.shape)),
        )

    return _record(out, (a, b), back)


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = Tensor(np.matmul(a.data, b.data))
    except ValueError as exc:
        raise ShapeError(f"matmul shapes {a.data.shape} x {b.data.shape}: {exc}") from None

    def back(g):
        ad, bd = a.data, b.data
        if ad.ndim == 1:
            ad = ad[None, :]
        if bd.ndim == 1:
            bd = bd[:, None]
        gm = g
        if a.data.ndim == 1:
            gm = np.expand_dims(gm, -2)
        if b.data.ndim == 1:
            gm = np.expand_dims(gm, -1)
        ga = np.matmul(gm, np.swapaxes(bd, -1, -2))
        gb = np.matmul(np.swapaxes(ad, -1, -2), gm)
        if a.data.ndim == 1:
            ga = ga.squeeze(-2)
        if b.data.ndim == 1:
            gb = gb.squeeze(-1)
        return (
            (a, _reduce_to_shape(ga, a.data.shape)),
            (b, _reduce_to_shape(gb, b.data.shape)),
        )

    return _record(out, (a, b), back)


def exp(a) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(np.exp(a.data))

    def back(g):
        return ((a, g * out.data),)

    return _record(out, (a,), back)


def log(a) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(np.log(a.data))

    def back(g):
        return ((a, g / a.data),)

    return _record(out, (a,), back)


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(np.tanh(a.data))

    def back(g):
        return ((a, g * (1.0 - out.data**2)),)

    return _record(out, (a,), back)


def sqrt(a) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(np.sqrt(a.data))

    def back(g):
        return ((a, g / (2.0 * out.data)),)

    return _record(out, (a,), back)


def pow_scalar(a, p: float) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(a.data**p)

    def back(g):
        return ((a, g * p * a.data ** (p - 1)),)

    return _record(out, (a,), back)


def relu(a) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(np.maximum(a.data, 0.0))

    def back(g):
        return ((a, g * (a.data > 0)),)

    return _record(out, (a,), back)


def clipped_relu(a, cap: float = 20.0) -> Tensor:
    """min(max(0, x), cap); the saturating activation used by the RNN stack."""
    a = _as_tensor(a)
    out = Tensor(np.clip(a.data, 0.0, cap))

    def back(g):
        return ((a, g * ((a.data > 0) & (a.data < cap))),)

    return _record(out, (a,), back)


def softmax(a, axis: int = -1) -> Tensor:
    """Exp-normalize along an axis, max-subtracted for stability."""
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y)

    def back(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return ((a, y * (g - dot)),)

    return _record(out, (a,), back)


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims))

    def back(g):
        if axis is None:
            ge = np.broadcast_to(g, a.data.shape)
        elif keepdims:
            ge = np.broadcast_to(g, a.data.shape)
        else:
            ge = np.broadcast_to(np.expand_dims(g, axis), a.data.shape)
        return ((a, ge.copy()),)

    return _record(out, (a,), back)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    count = a.data.size if axis is None else np.prod([a.data.shape[i] for i in np.atleast_1d(axis)])
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / float(count))


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(a.data.reshape(shape))

    def back(g):
        return ((a, g.reshape(a.data.shape)),)

    return _record(out, (a,), back)


def transpose(a, axes) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(a.data.transpose(axes))
    inverse = tuple(np.argsort(axes))

    def back(g):
        return ((a, g.transpose(inverse)),)

    return _record(out, (a,), back)


def flip(a, axis: int = 0) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(np.flip(a.data, axis=axis).copy())

    def back(g):
        return ((a, np.flip(g, axis=axis).copy()),)

    return _record(out, (a,), back)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def back(g):
        pieces = []
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            pieces.append((t, g[tuple(sl)].copy()))
        return tuple(pieces)

    return _record(out, tuple(tensors), back)


def gather_rows(table, ids: np.ndarray) -> Tensor:
    """Select rows of a 2-D table by integer index (embedding lookup)."""
    table = _as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    out = Tensor(table.data[ids])

    def back(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids, g)
        return ((table, gt),)

    return _record(out, (table,), back)


def logsumexp(a, axis: int = -1, keepdims: bool = False) -> Tensor:
    """log(sum(exp(x))) with the max treated as a constant shift."""
    a = _as_tensor(a)
    m = a.data.max(axis=axis, keepdims=True)
    shifted = sub(a, Tensor(m))
    total = tsum(exp(shifted), axis=axis, keepdims=True)
    out = add(log(total), Tensor(m))
    if not keepdims:
        out = reshape(out, np.squeeze(out.data, axis=axis).shape)
    return out


def dropout(a, rate: float, seed: int) -> Tensor:
    """Inverted dropout with an explicit seed; exact identity at rate 0."""
    a = _as_tensor(a)
    if rate == 0.0:
        return a
    mask = (np.random.default_rng(seed).random(a.data.shape) >= rate) / (1.0 - rate)
    return mul(a, Tensor(mask.astype(a.data.dtype)))


# ---------------------------------------------------------------------------
# spatial primitives


def _conv_cols(xp: np.ndarray, k: int, stride: int, h_out: int, w_out: int) -> np.ndarray:
    n, c = xp.shape[:2]
    sn, sc, sh, sw = xp.strides
    win = as_strided(
        xp,
        shape=(n, c, k, k, h_out, w_out),
        strides=(sn, sc, sh, sw, stride * sh, stride * sw),
    )
    return np.ascontiguousarray(win).reshape(n, c * k * k, h_out * w_out)


def conv2d(x, kernels, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation. Accepts [C,H,W] or batched [N,C,H,W] input."""
    x, kernels = _as_tensor(x), _as_tensor(kernels)
    squeeze = x.data.ndim == 3
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 4 or kernels.data.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input/kernels, got {x.data.shape}, {kernels.data.shape}")
    n, c_in, h, w = xd.shape
    c_out, c_k, k, k2 = kernels.data.shape
    if c_k != c_in or k != k2:
        raise ShapeError(f"kernel shape {kernels.data.shape} incompatible with input channels {c_in}")
    h_out = (h + 2 * padding - k) // stride + 1
    w_out = (w + 2 * padding - k) // stride + 1
    if h_out < 1 or w_out < 1:
        raise ShapeError(f"spatial dims {h}x{w} admit no {k}x{k} output at stride {stride}")

    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else xd
    cols = _conv_cols(xp, k, stride, h_out, w_out)
    kmat = kernels.data.reshape(c_out, c_in * k * k)
    y = np.matmul(kmat, cols).reshape(n, c_out, h_out, w_out)
    if bias is not None:
        bias = _as_tensor(bias)
        y = y + bias.data.reshape(1, c_out, 1, 1)
    out = Tensor(y[0] if squeeze else y)

    def back(g):
        gb4 = g[None] if squeeze else g
        gmat = gb4.reshape(n, c_out, h_out * w_out)
        gk = np.einsum("nol,ncl->oc", gmat, cols, optimize=True).reshape(kernels.data.shape)
        gcols = np.matmul(kmat.T, gmat).reshape(n, c_in, k, k, h_out, w_out)
        gxp = np.zeros_like(xp)
        for i in range(k):
            for j in range(k):
                gxp[:, :, i : i + stride * h_out : stride, j : j + stride * w_out : stride] += gcols[:, :, i, j]
        gx = gxp[:, :, padding : padding + h, padding : padding + w] if padding else gxp
        grads = [(x, gx[0] if squeeze else gx), (kernels, gk)]
        if bias is not None:
            grads.append((bias, gb4.sum(axis=(0, 2, 3)).reshape(bias.data.shape)))
        return tuple(grads)

    parents = (x, kernels) if bias is None else (x, kernels, bias)
    return _record(out, parents, back)


def maxpool2d(x, k: int, stride: int | None = None) -> Tensor:
    """Per-window spatial maximum; records argmax positions for backward."""
    x = _as_tensor(x)
    stride = k if stride is None else stride
    squeeze = x.data.ndim == 3
    xd = x.data[None] if squeeze else x.data
    n, c, h, w = xd.shape
    if k > h or k > w:
        raise ShapeError(f"pool window {k} larger than spatial dims {h}x{w}")
    h_out = (h - k) // stride + 1
    w_out = (w - k) // stride + 1
    sn, sc, sh, sw = xd.strides
    win = as_strided(
        xd,
        shape=(n, c, h_out, w_out, k, k),
        strides=(sn, sc, stride * sh, stride * sw, sh, sw),
    ).reshape(n, c, h_out, w_out, k * k)
    arg = win.argmax(axis=-1)
    y = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    out = Tensor(y[0] if squeeze else y)

    def back(g):
        gb4 = g[None] if squeeze else g
        gx = np.zeros_like(xd)
        oi, oj = np.meshgrid(np.arange(h_out), np.arange(w_out), indexing="ij")
        rows = oi[None, None] * stride + arg // k
        cols_ = oj[None, None] * stride + arg % k
        ni = np.arange(n)[:, None, None, None]
        ci = np.arange(c)[None, :, None, None]
        if stride >= k:
            # disjoint windows: plain fancy assignment, no accumulation needed
            flat = ((ni * c + ci) * h + rows) * w + cols_
            gx.reshape(-1)[flat.reshape(-1)] = gb4.reshape(-1)
        else:
            np.add.at(gx, (ni, ci, rows, cols_), gb4)
        return ((x, gx[0] if squeeze else gx),)

    return _record(out, (x,), back)


def batch_norm_train(x, gamma, beta, eps: float = 1e-5) -> tuple[Tensor, np.ndarray, np.ndarray]:
    """Channel norm over (N,H,W) of a [N,C,H,W] batch with a fused backward.

    Returns (normalized tensor, batch mean, batch variance); the stats feed
    the running averages kept outside the graph.
    """
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    xd = x.data
    if xd.ndim != 4:
        raise ShapeError(f"batch norm expects [N,C,H,W], got {xd.shape}")
    c = xd.shape[1]
    axes = (0, 2, 3)
    m = xd.shape[0] * xd.shape[2] * xd.shape[3]
    mu = xd.mean(axis=axes, keepdims=True)
    var = ((xd - mu) ** 2).mean(axis=axes, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mu) * inv_std
    gd = gamma.data.reshape(1, c, 1, 1)
    out = Tensor(xhat * gd + beta.data.reshape(1, c, 1, 1))

    def back(g):
        dgamma = (g * xhat).sum(axis=axes).reshape(gamma.data.shape)
        dbeta = g.sum(axis=axes).reshape(beta.data.shape)
        dxhat = g * gd
        sum_dxhat = dxhat.sum(axis=axes, keepdims=True)
        sum_dxhat_xhat = (dxhat * xhat).sum(axis=axes, keepdims=True)
        dx = inv_std / m * (m * dxhat - sum_dxhat - xhat * sum_dxhat_xhat)
        return ((x, dx), (gamma, dgamma), (beta, dbeta))

    return _record(out, (x, gamma, beta), back), mu.reshape(c), var.reshape(c)


def cross_entropy(probs, labels, floor: float = 1e-12) -> Tensor:
    """Negative log probability of the true label, averaged over a batch.

    ``probs`` must already be normalized (e.g. a softmax output); a zero
    probability at the label is clamped at ``floor``.
    """
    probs = _as_tensor(probs)
    single = probs.data.ndim == 1
    p2 = probs.data[None] if single else probs.data
    lab = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if lab.shape[0] != p2.shape[0]:
        raise ShapeError(f"got {lab.shape[0]} labels for {p2.shape[0]} rows")
    picked = p2[np.arange(p2.shape[0]), lab]
    clamped = np.maximum(picked, floor)
    out = Tensor(np.asarray(-np.mean(np.log(clamped)), dtype=probs.data.dtype))

    def back(g):
        gp = np.zeros_like(p2)
        live = picked >= floor
        rows = np.arange(p2.shape[0])
        gp[rows[live], lab[live]] = -1.0 / (clamped[live] * p2.shape[0])
        gp *= g
        return ((probs, gp[0] if single else gp),)

    return _record(out, (probs,), back)
