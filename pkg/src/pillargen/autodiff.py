"""Minimal reverse-mode autodiff over numpy float64 buffers.

Every operation builds a node holding its parents and a closure that routes
the output gradient back to them; ``Tensor.backward()`` runs the closures in
reverse topological order.  The op set is exactly what the generation model
needs: dense/conv layers, activations, grid sampling, gather/scatter
plumbing and the three training losses.  Single graphs are single-threaded;
independent graphs are safe to evaluate concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

Array = np.ndarray


def _asarray(x) -> Array:
    return np.asarray(x, dtype=np.float64)


class Tensor:
    """A float64 ndarray plus an optional gradient buffer of the same shape."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _asarray(data)
        self.grad: Array | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> Array:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar output")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward()

    # -- operator sugar (scalar/ndarray operands become constants) --

    def __add__(self, other):
        return add(self, as_tensor(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, as_tensor(other))

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, as_tensor(other))

    __rmul__ = __mul__

    def __truediv__(self, s):
        if isinstance(s, Tensor) or isinstance(s, np.ndarray):
            raise TypeError("division only supported by python scalars")
        return mul(self, as_tensor(1.0 / float(s)))

    def __neg__(self):
        return mul(self, as_tensor(-1.0))

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


@dataclass(frozen=True)
class Parameter:
    """Named trainable tensor; names are unique within a model."""

    name: str
    tensor: Tensor


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _accumulate(t: Tensor, g: Array) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _node(data: Array, parents: Sequence[Tensor], backward: Callable[[], None]) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: Array, shape: tuple[int, ...]) -> Array:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, s in enumerate(shape):
        if s == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# arithmetic
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data + b.data

    def backward():
        _accumulate(a, _unbroadcast(out.grad, a.data.shape))
        _accumulate(b, _unbroadcast(out.grad, b.data.shape))

    out = _node(out_data, (a, b), backward)
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data - b.data

    def backward():
        _accumulate(a, _unbroadcast(out.grad, a.data.shape))
        _accumulate(b, _unbroadcast(-out.grad, b.data.shape))

    out = _node(out_data, (a, b), backward)
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data * b.data

    def backward():
        _accumulate(a, _unbroadcast(out.grad * b.data, a.data.shape))
        _accumulate(b, _unbroadcast(out.grad * a.data, b.data.shape))

    out = _node(out_data, (a, b), backward)
    return out


def absolute(a: Tensor) -> Tensor:
    out_data = np.abs(a.data)

    def backward():
        _accumulate(a, out.grad * np.sign(a.data))

    out = _node(out_data, (a,), backward)
    return out


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward():
        g = out.grad
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(g, a.data.shape).copy())

    out = _node(out_data, (a,), backward)
    return out


def tmean(a: Tensor, axis=None) -> Tensor:
    n = a.data.size if axis is None else a.data.shape[axis]
    return tsum(a, axis=axis) / n


# ---------------------------------------------------------------------------
# shape plumbing
# ---------------------------------------------------------------------------


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    out_data = a.data.reshape(shape)

    def backward():
        _accumulate(a, out.grad.reshape(a.data.shape))

    out = _node(out_data, (a,), backward)
    return out


def transpose(a: Tensor, axes: tuple[int, ...]) -> Tensor:
    out_data = a.data.transpose(axes)
    inv = np.argsort(axes)

    def backward():
        _accumulate(a, out.grad.transpose(inv))

    out = _node(out_data, (a,), backward)
    return out


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    index = [slice(None)] * a.data.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)
    out_data = a.data[index].copy()

    def backward():
        g = np.zeros_like(a.data)
        g[index] = out.grad
        _accumulate(a, g)

    out = _node(out_data, (a,), backward)
    return out


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    out_data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward():
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            index = [slice(None)] * out.grad.ndim
            index[axis] = slice(lo, hi)
            _accumulate(p, out.grad[tuple(index)])

    out = _node(out_data, parts, backward)
    return out


def take_rows(a: Tensor, idx: Array) -> Tensor:
    idx = np.asarray(idx, dtype=np.intp)
    out_data = a.data[idx]

    def backward():
        g = np.zeros_like(a.data)
        np.add.at(g, idx, out.grad)
        _accumulate(a, g)

    out = _node(out_data, (a,), backward)
    return out


def repeat_rows(a: Tensor, counts: Array) -> Tensor:
    counts = np.asarray(counts, dtype=np.intp)
    if np.any(counts < 1):
        raise ValueError("repeat_rows requires every count >= 1")
    out_data = np.repeat(a.data, counts, axis=0)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])

    def backward():
        _accumulate(a, np.add.reduceat(out.grad, starts, axis=0))

    out = _node(out_data, (a,), backward)
    return out


def segment_max(a: Tensor, starts: Array) -> Tensor:
    """Row-segment max: segment s covers rows [starts[s], starts[s+1]).

    ``starts`` has one trailing sentinel equal to the row count; every
    segment must be non-empty.
    """
    starts = np.asarray(starts, dtype=np.intp)
    n_seg = len(starts) - 1
    n_col = a.data.shape[1]
    out_data = np.empty((n_seg, n_col), dtype=np.float64)
    arg = np.empty((n_seg, n_col), dtype=np.intp)
    for s in range(n_seg):
        lo, hi = starts[s], starts[s + 1]
        block = a.data[lo:hi]
        local = block.argmax(axis=0)
        arg[s] = lo + local
        out_data[s] = block[local, np.arange(n_col)]

    def backward():
        g = np.zeros_like(a.data)
        cols = np.broadcast_to(np.arange(n_col), arg.shape)
        g[arg, cols] += out.grad
        _accumulate(a, g)

    out = _node(out_data, (a,), backward)
    return out


def gather_pixels(a: Tensor, rows: Array, cols: Array) -> Tensor:
    """Read (C, H, W) map at M pixel positions -> (M, C)."""
    rows = np.asarray(rows, dtype=np.intp)
    cols = np.asarray(cols, dtype=np.intp)
    out_data = a.data[:, rows, cols].T.copy()

    def backward():
        g = np.zeros_like(a.data)
        np.add.at(g.reshape(g.shape[0], -1).T, rows * a.data.shape[2] + cols, out.grad)
        _accumulate(a, g)

    out = _node(out_data, (a,), backward)
    return out


def scatter_rows(feats: Tensor, rows: Array, cols: Array, height: int, width: int) -> Tensor:
    """Write P feature rows onto a zero (C, H, W) map; positions are unique."""
    rows = np.asarray(rows, dtype=np.intp)
    cols = np.asarray(cols, dtype=np.intp)
    n_ch = feats.data.shape[1]
    out_data = np.zeros((n_ch, height, width), dtype=np.float64)
    out_data[:, rows, cols] = feats.data.T

    def backward():
        _accumulate(feats, out.grad[:, rows, cols].T.copy())

    out = _node(out_data, (feats,), backward)
    return out


# ---------------------------------------------------------------------------
# neural-net layers
# ---------------------------------------------------------------------------


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """y = x @ w.T + b for x (N, in), w (out, in), b (out)."""
    if x.data.ndim != 2 or w.data.ndim != 2 or x.data.shape[1] != w.data.shape[1]:
        raise ValueError(f"linear shape mismatch: x{x.data.shape} w{w.data.shape}")
    if b.data.shape != (w.data.shape[0],):
        raise ValueError(f"linear bias shape mismatch: {b.data.shape}")
    out_data = x.data @ w.data.T + b.data

    def backward():
        _accumulate(x, out.grad @ w.data)
        _accumulate(w, out.grad.T @ x.data)
        _accumulate(b, out.grad.sum(axis=0))

    out = _node(out_data, (x, w, b), backward)
    return out


_CONV_INDEX_CACHE: dict[tuple, tuple] = {}


def _conv_indices(c_in: int, h: int, w: int, k: int, stride: int, pad: int):
    key = (c_in, h, w, k, stride, pad)
    hit = _CONV_INDEX_CACHE.get(key)
    if hit is not None:
        return hit
    hp, wp = h + 2 * pad, w + 2 * pad
    h_out = (hp - k) // stride + 1
    w_out = (wp - k) // stride + 1
    ci = np.repeat(np.arange(c_in), k * k)
    ki = np.tile(np.repeat(np.arange(k), k), c_in)
    kj = np.tile(np.arange(k), c_in * k)
    oi = np.repeat(np.arange(h_out) * stride, w_out)
    oj = np.tile(np.arange(w_out) * stride, h_out)
    flat = (ci[:, None] * hp + ki[:, None] + oi[None, :]) * wp + kj[:, None] + oj[None, :]
    hit = (flat, (hp, wp), (h_out, w_out))
    _CONV_INDEX_CACHE[key] = hit
    return hit


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of a (C_in, H, W) map with (C_out, C_in, k, k) kernels."""
    c_in, h, width = x.data.shape
    c_out, c_in_w, k, k2 = w.data.shape
    if c_in_w != c_in or k != k2:
        raise ValueError(f"conv2d shape mismatch: x{x.data.shape} w{w.data.shape}")
    if b.data.shape != (c_out,):
        raise ValueError(f"conv2d bias shape mismatch: {b.data.shape}")
    flat, (hp, wp), (h_out, w_out) = _conv_indices(c_in, h, width, k, stride, padding)
    if padding:
        xp = np.zeros((c_in, hp, wp), dtype=np.float64)
        xp[:, padding:padding + h, padding:padding + width] = x.data
    else:
        xp = x.data
    cols = xp.reshape(-1)[flat]
    wmat = w.data.reshape(c_out, -1)
    out_data = (wmat @ cols + b.data[:, None]).reshape(c_out, h_out, w_out)

    def backward():
        gmat = out.grad.reshape(c_out, -1)
        _accumulate(w, (gmat @ cols.T).reshape(w.data.shape))
        _accumulate(b, gmat.sum(axis=1))
        if x.requires_grad:
            dcols = wmat.T @ gmat
            dxp = np.bincount(flat.reshape(-1), weights=dcols.reshape(-1),
                              minlength=c_in * hp * wp).reshape(c_in, hp, wp)
            if padding:
                dxp = dxp[:, padding:padding + h, padding:padding + width]
            _accumulate(x, dxp)

    out = _node(out_data, (x, w, b), backward)
    return out


def upsample_nearest(x: Tensor, factor: int) -> Tensor:
    out_data = np.repeat(np.repeat(x.data, factor, axis=1), factor, axis=2)

    def backward():
        c, h, w = x.data.shape
        g = out.grad.reshape(c, h, factor, w, factor).sum(axis=(2, 4))
        _accumulate(x, g)

    out = _node(out_data, (x,), backward)
    return out


def relu(x: Tensor) -> Tensor:
    out_data = np.maximum(x.data, 0.0)

    def backward():
        _accumulate(x, out.grad * (x.data > 0.0))

    out = _node(out_data, (x,), backward)
    return out


def sigmoid(x: Tensor) -> Tensor:
    out_data = 1.0 / (1.0 + np.exp(-x.data))

    def backward():
        _accumulate(x, out.grad * out_data * (1.0 - out_data))

    out = _node(out_data, (x,), backward)
    return out


def tanh(x: Tensor) -> Tensor:
    out_data = np.tanh(x.data)

    def backward():
        _accumulate(x, out.grad * (1.0 - out_data * out_data))

    out = _node(out_data, (x,), backward)
    return out


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def backward():
        dot = (out.grad * out_data).sum(axis=axis, keepdims=True)
        _accumulate(x, out_data * (out.grad - dot))

    out = _node(out_data, (x,), backward)
    return out


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    out_data = np.clip(x.data, lo, hi)

    def backward():
        inside = (x.data >= lo) & (x.data <= hi)
        _accumulate(x, out.grad * inside)

    out = _node(out_data, (x,), backward)
    return out


def bilinear_sample(fmap: Tensor, xy: Tensor) -> Tensor:
    """Bilinear read of a (C, H, W) map at M continuous (col, row) positions.

    Positions are in cell units (integer coordinates hit cell values
    exactly) and are clamped to [0, W-1] x [0, H-1]; clamping zeroes the
    coordinate gradient there.  Differentiable w.r.t. both arguments.
    """
    c, h, w = fmap.data.shape
    x = np.clip(xy.data[:, 0], 0.0, w - 1.0)
    y = np.clip(xy.data[:, 1], 0.0, h - 1.0)
    x0 = np.minimum(np.floor(x), w - 2 if w > 1 else 0).astype(np.intp)
    y0 = np.minimum(np.floor(y), h - 2 if h > 1 else 0).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = x - x0
    fy = y - y0
    f2 = fmap.data.reshape(c, -1)
    v00 = f2[:, y0 * w + x0]
    v01 = f2[:, y0 * w + x1]
    v10 = f2[:, y1 * w + x0]
    v11 = f2[:, y1 * w + x1]
    w00 = (1 - fx) * (1 - fy)
    w01 = fx * (1 - fy)
    w10 = (1 - fx) * fy
    w11 = fx * fy
    out_data = (v00 * w00 + v01 * w01 + v10 * w10 + v11 * w11).T.copy()

    def backward():
        g = out.grad  # (M, C)
        if fmap.requires_grad:
            df = np.zeros((h * w, c), dtype=np.float64)
            np.add.at(df, y0 * w + x0, g * w00[:, None])
            np.add.at(df, y0 * w + x1, g * w01[:, None])
            np.add.at(df, y1 * w + x0, g * w10[:, None])
            np.add.at(df, y1 * w + x1, g * w11[:, None])
            _accumulate(fmap, df.T.reshape(fmap.data.shape))
        if xy.requires_grad:
            dvdx = (v01 - v00) * (1 - fy) + (v11 - v10) * fy
            dvdy = (v10 - v00) * (1 - fx) + (v11 - v01) * fx
            gx = (g.T * dvdx).sum(axis=0)
            gy = (g.T * dvdy).sum(axis=0)
            inside_x = (xy.data[:, 0] >= 0.0) & (xy.data[:, 0] <= w - 1.0)
            inside_y = (xy.data[:, 1] >= 0.0) & (xy.data[:, 1] <= h - 1.0)
            _accumulate(xy, np.stack([gx * inside_x, gy * inside_y], axis=1))

    out = _node(out_data, (fmap, xy), backward)
    return out


# ---------------------------------------------------------------------------
# losses (fused scalar ops with closed-form gradients)
# ---------------------------------------------------------------------------

PROB_EPS = 1e-6


def focal_loss(p: Tensor, y: Array, alpha: float = 0.25, gamma: float = 2.0) -> Tensor:
    """Mean of -alpha_t (1 - p_t)^gamma log(p_t) with p clamped away from {0, 1}."""
    y = _asarray(y)
    pc = np.clip(p.data, PROB_EPS, 1.0 - PROB_EPS)
    pt = np.where(y > 0.5, pc, 1.0 - pc)
    at = np.where(y > 0.5, alpha, 1.0 - alpha)
    one_m = 1.0 - pt
    elems = -at * one_m**gamma * np.log(pt)
    n = max(pt.size, 1)
    out_data = np.asarray(elems.sum() / n)

    def backward():
        # d/dpt applied through dpt/dp = +-1; zero where the clamp saturates
        dldpt = -at * (one_m**gamma / pt - gamma * one_m ** (gamma - 1.0) * np.log(pt))
        sign = np.where(y > 0.5, 1.0, -1.0)
        inside = (p.data >= PROB_EPS) & (p.data <= 1.0 - PROB_EPS)
        _accumulate(p, out.grad * dldpt * sign * inside / n)

    out = _node(out_data, (p,), backward)
    return out


def smooth_l1(pred: Tensor, target: Array, beta: float = 1.0) -> Tensor:
    """Mean Huber-style loss: 0.5 d^2 / beta for |d| < beta, else |d| - 0.5 beta."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    target = _asarray(target)
    d = pred.data - target
    ad = np.abs(d)
    elems = np.where(ad < beta, 0.5 * d * d / beta, ad - 0.5 * beta)
    n = max(d.size, 1)
    out_data = np.asarray(elems.sum() / n)

    def backward():
        grad = np.where(ad < beta, d / beta, np.sign(d))
        _accumulate(pred, out.grad * grad / n)

    out = _node(out_data, (pred,), backward)
    return out


def bce(p: Tensor, y: Array, weights: Array | None = None) -> Tensor:
    """Binary cross entropy on probabilities.

    Mean over elements by default; with ``weights`` the reduction is the
    weighted sum (used for per-pillar normalised score losses).
    """
    y = _asarray(y)
    pc = np.clip(p.data, PROB_EPS, 1.0 - PROB_EPS)
    elems = -(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc))
    if weights is None:
        n = max(pc.size, 1)
        out_data = np.asarray(elems.sum() / n)
    else:
        weights = _asarray(weights)
        out_data = np.asarray((elems * weights).sum())

    def backward():
        dldp = (pc - y) / (pc * (1.0 - pc))
        inside = (p.data >= PROB_EPS) & (p.data <= 1.0 - PROB_EPS)
        scale = (1.0 / max(pc.size, 1)) if weights is None else weights
        _accumulate(p, out.grad * dldp * inside * scale)

    out = _node(out_data, (p,), backward)
    return out


def add_n(terms: Iterable[Tensor]) -> Tensor:
    """Sum a list of scalars (empty -> constant 0)."""
    terms = list(terms)
    if not terms:
        return Tensor(0.0)
    acc = terms[0]
    for t in terms[1:]:
        acc = add(acc, t)
    return acc
