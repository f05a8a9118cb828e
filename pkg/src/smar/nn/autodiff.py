"""A small tape-free reverse-mode autodiff over numpy arrays.

Each :class:`Var` remembers its parents and a closure that pushes its
adjoint back to them.  :func:`backward` orders the graph topologically and
runs those closures once.  Image tensors are ``(B, C, H, W)``.

Primitives keep the dtype of their inputs, so float64 inputs give a float64
graph (used by the gradient checks).
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from ..core import Geometry
from ..errors import AllMasked, NonScalarLoss, ShapeMismatch
from ..projector import fbp, fbp_vjp, forward_project, forward_project_vjp


class Var:
    __slots__ = ("value", "grad", "parents", "backward_fn", "requires_grad", "name")

    def __init__(self, value, requires_grad: bool = False, name: str = ""):
        self.value = np.asarray(value)
        self.grad = None
        self.parents: tuple[Var, ...] = ()
        self.backward_fn: Callable | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var({self.name or 'anon'}, shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)


def param(value, name: str = "") -> Var:
    return Var(value, requires_grad=True, name=name)


def _wrap(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def _node(value, parents: Sequence[Var], backward_fn) -> Var:
    out = Var(value)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = tuple(parents)
        out.backward_fn = backward_fn
    return out


def _accum(v: Var, g) -> None:
    if not v.requires_grad:
        return
    g = np.asarray(g, dtype=v.value.dtype)
    if v.grad is None:
        v.grad = g.copy()
    else:
        v.grad += g


def _same_shape(op, *vs):
    shapes = {v.shape for v in vs}
    if len(shapes) != 1:
        raise ShapeMismatch(f"{op}: operand shapes differ {sorted(shapes)}")


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------


def add(a, b) -> Var:
    a, b = _wrap(a), _wrap(b)
    _same_shape("add", a, b)

    def bw(g):
        _accum(a, g)
        _accum(b, g)

    return _node(a.value + b.value, (a, b), bw)


def sub(a, b) -> Var:
    a, b = _wrap(a), _wrap(b)
    _same_shape("sub", a, b)

    def bw(g):
        _accum(a, g)
        _accum(b, -g)

    return _node(a.value - b.value, (a, b), bw)


def mul(a, b) -> Var:
    a, b = _wrap(a), _wrap(b)
    _same_shape("mul", a, b)

    def bw(g):
        _accum(a, g * b.value)
        _accum(b, g * a.value)

    return _node(a.value * b.value, (a, b), bw)


def scale(x: Var, c: float) -> Var:
    x = _wrap(x)
    c = float(c)

    def bw(g):
        _accum(x, g * c)

    return _node(x.value * x.value.dtype.type(c), (x,), bw)


def relu(x: Var) -> Var:
    return leaky_relu(x, 0.0)


def leaky_relu(x: Var, slope: float = 0.2) -> Var:
    x = _wrap(x)
    pos = x.value > 0
    factor = np.where(pos, 1.0, slope).astype(x.value.dtype)

    def bw(g):
        _accum(x, g * factor)

    return _node(x.value * factor, (x,), bw)


def sum_all(x: Var) -> Var:
    x = _wrap(x)

    def bw(g):
        _accum(x, np.broadcast_to(g, x.shape))

    return _node(np.sum(x.value, dtype=np.float64).astype(x.value.dtype).reshape(()), (x,), bw)


def add_scalars(terms: Sequence[tuple[Var, float]]) -> Var:
    """sum_i w_i * s_i over scalar nodes."""
    out = None
    for node, w in terms:
        t = scale(node, w)
        out = t if out is None else add(out, t)
    return out


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def masked_l1(a, b, mask=None) -> Var:
    """Mean of |a - b| over the entries where ``mask`` is true (all entries if None)."""
    a, b = _wrap(a), _wrap(b)
    _same_shape("masked_l1", a, b)
    m = np.ones(a.shape, dtype=bool) if mask is None else np.broadcast_to(np.asarray(mask, bool), a.shape)
    count = int(m.sum())
    if count == 0:
        raise AllMasked("masked_l1: every entry is masked out")
    diff = a.value.astype(np.float64) - b.value.astype(np.float64)
    loss = np.abs(diff)[m].sum() / count
    dtype = np.result_type(a.value.dtype, b.value.dtype)

    def bw(g):
        local = np.sign(diff) * m * (float(g) / count)
        _accum(a, local)
        _accum(b, -local)

    return _node(np.asarray(loss, dtype=dtype).reshape(()), (a, b), bw)


# ---------------------------------------------------------------------------
# convolution and resampling
# ---------------------------------------------------------------------------


def _im2col(xp, k, h, w):
    b, c = xp.shape[:2]
    cols = np.empty((b, c, k, k, h, w), dtype=xp.dtype)
    for di in range(k):
        for dj in range(k):
            cols[:, :, di, dj] = xp[:, :, di:di + h, dj:dj + w]
    return cols.reshape(b, c * k * k, h * w)


def conv2d(x: Var, w: Var, b: Var | None = None) -> Var:
    """Stride-1 'same' convolution (cross-correlation) with odd square kernels."""
    x, w = _wrap(x), _wrap(w)
    if x.value.ndim != 4 or w.value.ndim != 4:
        raise ShapeMismatch("conv2d expects x (B,C,H,W) and w (Co,C,k,k)")
    bs, c, h, wd = x.shape
    co, ci, k, k2 = w.shape
    if ci != c or k != k2 or k % 2 == 0:
        raise ShapeMismatch(f"conv2d: input {x.shape} incompatible with kernel {w.shape}")
    if b is not None:
        b = _wrap(b)
        if b.shape != (co,):
            raise ShapeMismatch(f"conv2d: bias shape {b.shape} != ({co},)")
    p = k // 2
    xp = np.pad(x.value, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.value
    cols = _im2col(xp, k, h, wd)
    wmat = w.value.reshape(co, -1)
    out = np.matmul(wmat, cols)
    if b is not None:
        out += b.value[None, :, None]
    out = out.reshape(bs, co, h, wd)
    parents = (x, w) if b is None else (x, w, b)

    def bw(g):
        g2 = g.reshape(bs, co, h * wd)
        if w.requires_grad:
            _accum(w, np.tensordot(g2, cols, axes=([0, 2], [0, 2])).reshape(w.shape))
        if b is not None and b.requires_grad:
            _accum(b, g2.sum(axis=(0, 2)))
        if x.requires_grad:
            dcols = np.matmul(wmat.T, g2).reshape(bs, c, k, k, h, wd)
            dxp = np.zeros_like(xp)
            for di in range(k):
                for dj in range(k):
                    dxp[:, :, di:di + h, dj:dj + wd] += dcols[:, :, di, dj]
            _accum(x, dxp[:, :, p:p + h, p:p + wd] if p else dxp)

    return _node(out, parents, bw)


def avg_pool2(x: Var) -> Var:
    x = _wrap(x)
    bs, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeMismatch(f"avg_pool2 needs even spatial dims, got {x.shape}")
    out = x.value.reshape(bs, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))

    def bw(g):
        _accum(x, np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) * 0.25)

    return _node(out, (x,), bw)


def upsample2(x: Var) -> Var:
    x = _wrap(x)
    bs, c, h, w = x.shape
    out = np.repeat(np.repeat(x.value, 2, axis=2), 2, axis=3)

    def bw(g):
        _accum(x, g.reshape(bs, c, h, 2, w, 2).sum(axis=(3, 5)))

    return _node(out, (x,), bw)


def concat(xs: Sequence, axis: int = 1) -> Var:
    xs = [_wrap(x) for x in xs]
    ref = list(xs[0].shape)
    for x in xs[1:]:
        s = list(x.shape)
        if len(s) != len(ref) or any(a != b for i, (a, b) in enumerate(zip(s, ref)) if i != axis):
            raise ShapeMismatch(f"concat: incompatible shapes {[v.shape for v in xs]}")
    sizes = [x.shape[axis] for x in xs]
    out = np.concatenate([x.value for x in xs], axis=axis)

    def bw(g):
        for x, piece in zip(xs, np.split(g, np.cumsum(sizes)[:-1], axis=axis)):
            _accum(x, piece)

    return _node(out, xs, bw)


def pad_to(x: Var, h: int, w: int) -> Var:
    """Zero-pad the trailing two axes at the bottom/right up to (h, w)."""
    x = _wrap(x)
    ih, iw = x.shape[-2:]
    if ih > h or iw > w:
        raise ShapeMismatch(f"pad_to: {x.shape} larger than {(h, w)}")
    if (ih, iw) == (h, w):
        return x
    widths = [(0, 0)] * (x.value.ndim - 2) + [(0, h - ih), (0, w - iw)]

    def bw(g):
        _accum(x, g[..., :ih, :iw])

    return _node(np.pad(x.value, widths), (x,), bw)


def crop_to(x: Var, h: int, w: int) -> Var:
    x = _wrap(x)
    ih, iw = x.shape[-2:]
    if ih < h or iw < w:
        raise ShapeMismatch(f"crop_to: {x.shape} smaller than {(h, w)}")
    if (ih, iw) == (h, w):
        return x

    def bw(g):
        full = np.zeros(x.shape, dtype=x.value.dtype)
        full[..., :h, :w] = g
        _accum(x, full)

    return _node(np.ascontiguousarray(x.value[..., :h, :w]), (x,), bw)


# ---------------------------------------------------------------------------
# tomography nodes
# ---------------------------------------------------------------------------


def fbp_node(x: Var, geometry: Geometry) -> Var:
    """FBP of every (N, D) slice; the adjoint is :func:`fbp_vjp`."""
    x = _wrap(x)
    out = fbp(x.value, geometry).astype(x.value.dtype)

    def bw(g):
        _accum(x, fbp_vjp(g, geometry))

    return _node(out, (x,), bw)


def project_node(x: Var, geometry: Geometry) -> Var:
    x = _wrap(x)
    out = forward_project(x.value, geometry).astype(x.value.dtype)

    def bw(g):
        _accum(x, forward_project_vjp(g, geometry))

    return _node(out, (x,), bw)


# ---------------------------------------------------------------------------


def topo_order(root: Var) -> list[Var]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Var) -> None:
    """Populate ``.grad`` on every ``requires_grad`` leaf reachable from ``loss``."""
    if loss.value.size != 1:
        raise NonScalarLoss(f"loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = topo_order(loss)
    for node in order:
        if node.backward_fn is not None:
            node.grad = None
    loss.grad = np.ones_like(loss.value)
    for node in reversed(order):
        if node.backward_fn is not None and node.grad is not None:
            node.backward_fn(node.grad)
