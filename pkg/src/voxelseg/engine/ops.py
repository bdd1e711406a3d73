"""Differentiable primitive operations on tensors.

Broadcasting is deliberately narrow: binary ops accept equal-rank operands
whose axes either match or are 1 on one side (the only pattern the network
needs is a single-channel attention map scaling a multi-channel feature map).
Gradients for broadcast operands are summed back over the expanded axes.
"""

import numpy as np

from ..errors import EngineError, ShapeError
from .tensor import Tensor, record_op, active_tape, _register_operator


def _binary_shapes(a: Tensor, b: Tensor, op: str):
    if a.data.dtype != b.data.dtype:
        raise ShapeError(f"{op}: dtype mismatch {a.data.dtype} vs {b.data.dtype}")
    sa, sb = a.shape, b.shape
    if len(sa) != len(sb):
        raise ShapeError(f"{op}: rank mismatch {sa} vs {sb}")
    for da, db in zip(sa, sb):
        if da != db and da != 1 and db != 1:
            raise ShapeError(f"{op}: incompatible shapes {sa} vs {sb}")


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    return grad.sum(axis=axes, keepdims=True)


def add(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes(a, b, "add")
    out = a.data + b.data
    return record_op("add", out, (a, b),
                     lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes(a, b, "sub")
    out = a.data - b.data
    return record_op("sub", out, (a, b),
                     lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes(a, b, "mul")
    out = a.data * b.data
    return record_op("mul", out, (a, b),
                     lambda g: (_unbroadcast(g * b.data, a.shape),
                                _unbroadcast(g * a.data, b.shape)))


def div(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes(a, b, "div")
    out = a.data / b.data
    return record_op("div", out, (a, b),
                     lambda g: (_unbroadcast(g / b.data, a.shape),
                                _unbroadcast(-g * a.data / (b.data * b.data), b.shape)))


def neg(x: Tensor) -> Tensor:
    return record_op("neg", -x.data, (x,), lambda g: (-g,))


def scale(x: Tensor, k: float) -> Tensor:
    k = float(k)
    out = x.data * x.data.dtype.type(k)
    return record_op("scale", out, (x,), lambda g: (g * k,))


def shift(x: Tensor, k: float) -> Tensor:
    """Add the constant ``k`` elementwise."""
    out = x.data + x.data.dtype.type(k)
    return record_op("shift", out, (x,), lambda g: (g,))


def map_elementwise(x: Tensor, f, df=None) -> Tensor:
    """Apply ``f`` elementwise; ``df`` supplies the derivative for backprop."""
    out = np.asarray(f(x.data), dtype=x.data.dtype)
    if out.shape != x.data.shape:
        raise ShapeError(f"map: f changed shape {x.shape} -> {out.shape}")
    if active_tape() is not None and x.node is not None and df is None:
        raise EngineError("map under an active tape requires a derivative df")
    if df is None:
        return Tensor(out)
    return record_op("map", out, (x,), lambda g: (g * df(x.data),))


def power(x: Tensor, p: float) -> Tensor:
    p = float(p)
    out = np.power(x.data, p)
    if p == 0.0:
        return record_op("power", out, (x,), lambda g: (np.zeros_like(g),))
    return record_op("power", out, (x,),
                     lambda g: (g * p * np.power(x.data, p - 1.0),))


def log(x: Tensor) -> Tensor:
    return record_op("log", np.log(x.data), (x,), lambda g: (g / x.data,))


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clip to [lo, hi]; gradient passes through inside the closed interval."""
    out = np.clip(x.data, lo, hi)
    mask = (x.data >= lo) & (x.data <= hi)
    return record_op("clamp", out, (x,), lambda g: (g * mask,))


# ---------------------------------------------------------------------------
# Reductions
# ---------------------------------------------------------------------------

def _norm_axes(axes, rank: int) -> tuple:
    if axes is None:
        axes = tuple(range(rank))
    elif isinstance(axes, int):
        axes = (axes,)
    axes = tuple(sorted(a % rank if -rank <= a < rank else a for a in axes))
    for a in axes:
        if not 0 <= a < rank:
            raise ShapeError(f"axis {a} out of range for rank {rank}")
    if len(set(axes)) != len(axes):
        raise ShapeError(f"duplicate axes {axes}")
    return axes


def reduce_sum(x: Tensor, axes=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axes, x.data.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)
    red_shape = np.shape(out)  # Tensor stores 0-d results as (1,); undo that

    def vjp(g):
        g = np.reshape(g, red_shape)
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).copy(),)

    return record_op("sum", out, (x,), vjp)


def reduce_mean(x: Tensor, axes=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axes, x.data.ndim)
    count = 1
    for a in axes:
        count *= x.shape[a]
    out = x.data.mean(axis=axes, keepdims=keepdims)
    red_shape = np.shape(out)

    def vjp(g):
        g = np.reshape(g, red_shape)
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, x.shape).astype(x.data.dtype, copy=True),)

    return record_op("mean", out, (x,), vjp)


def reduce_max(x: Tensor, axes=None, keepdims: bool = False) -> Tensor:
    """Max over ``axes``; gradient routes to the first-offset maximum on ties."""
    axes = _norm_axes(axes, x.data.ndim)
    rank = x.data.ndim
    kept = tuple(i for i in range(rank) if i not in axes)
    perm = kept + axes
    xt = np.transpose(x.data, perm)
    kept_shape = xt.shape[:len(kept)]
    flat = xt.reshape(kept_shape + (-1,))
    idx = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    if keepdims:
        out_full = np.expand_dims(out, axes) if kept else out.reshape((1,) * rank)
    else:
        out_full = out

    def vjp(g):
        gk = g.reshape(kept_shape)
        gt = np.zeros_like(flat)
        np.put_along_axis(gt, idx[..., None], gk[..., None], axis=-1)
        gx = gt.reshape(xt.shape)
        inv = np.argsort(perm)
        return (np.transpose(gx, inv).copy(),)

    return record_op("max", out_full, (x,), vjp)


# ---------------------------------------------------------------------------
# Structure: concat / crop / pad / reshape
# ---------------------------------------------------------------------------

def concat(axis: int, parts) -> Tensor:
    parts = list(parts)
    if not parts:
        raise ShapeError("concat of zero parts")
    if len(parts) == 1:
        return parts[0]
    rank = parts[0].data.ndim
    axis = axis % rank
    for p in parts[1:]:
        if p.data.ndim != rank:
            raise ShapeError("concat: rank mismatch among parts")
        for a in range(rank):
            if a != axis and p.shape[a] != parts[0].shape[a]:
                raise ShapeError(
                    f"concat: extent mismatch on axis {a}: "
                    f"{parts[0].shape} vs {p.shape}")
        if p.data.dtype != parts[0].data.dtype:
            raise ShapeError("concat: dtype mismatch among parts")
    out = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]
    bounds = np.cumsum([0] + sizes)

    def vjp(g):
        return tuple(
            np.ascontiguousarray(np.take(g, range(bounds[i], bounds[i + 1]), axis=axis))
            for i in range(len(parts)))

    return record_op("concat", out, tuple(parts), vjp)


def crop(x: Tensor, starts, sizes) -> Tensor:
    """Slice a window: per-axis start and extent."""
    rank = x.data.ndim
    starts = tuple(int(s) for s in starts)
    sizes = tuple(int(s) for s in sizes)
    if len(starts) != rank or len(sizes) != rank:
        raise ShapeError(f"crop: expected {rank} starts/sizes")
    for a, (st, sz) in enumerate(zip(starts, sizes)):
        if st < 0 or sz < 1 or st + sz > x.shape[a]:
            raise ShapeError(
                f"crop window [{st}, {st + sz}) exceeds axis {a} extent {x.shape[a]}")
    sl = tuple(slice(st, st + sz) for st, sz in zip(starts, sizes))
    out = np.ascontiguousarray(x.data[sl])

    def vjp(g):
        gx = np.zeros_like(x.data)
        gx[sl] = g
        return (gx,)

    return record_op("crop", out, (x,), vjp)


def pad(x: Tensor, widths, value: float = 0.0) -> Tensor:
    """Pad with a constant; ``widths`` is one (before, after) pair per axis."""
    rank = x.data.ndim
    widths = tuple((int(lo), int(hi)) for lo, hi in widths)
    if len(widths) != rank:
        raise ShapeError(f"pad: expected {rank} width pairs")
    if any(lo < 0 or hi < 0 for lo, hi in widths):
        raise ShapeError(f"pad widths must be >= 0, got {widths}")
    out = np.pad(x.data, widths, constant_values=x.data.dtype.type(value))
    sl = tuple(slice(lo, lo + n) for (lo, _), n in zip(widths, x.shape))

    def vjp(g):
        return (np.ascontiguousarray(g[sl]),)

    return record_op("pad", out, (x,), vjp)


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    out = x.data.reshape(shape)
    return record_op("reshape", out, (x,),
                     lambda g: (g.reshape(x.shape),))


_register_operator("add", add)
_register_operator("sub", sub)
_register_operator("mul", mul)
_register_operator("scale", scale)
_register_operator("neg", neg)
