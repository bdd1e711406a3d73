"""Differentiable layer operations for volumetric networks.

Everything here takes and returns :class:`voxelseg.engine.Tensor` values with
layout ``(N, C, D, H, W)`` and records itself on the active tape.  The heavy
convolution and pooling arithmetic lives in :mod:`voxelseg.kernels`; the
normalization is composed from engine primitives so its gradient needs no
hand-written adjoint.
"""

import math

import numpy as np

from . import kernels
from .engine import (
    Tensor,
    record_op,
    add,
    sub,
    mul,
    reduce_mean,
    reshape,
    power,
    shift,
)
from .errors import ShapeError

GROUP_NORM_EPS = 1e-5


def _expect_rank5(name: str, t: Tensor) -> None:
    if t.data.ndim != 5:
        raise ShapeError(f"{name}: expected (N, C, D, H, W), got shape {t.shape}")


def conv3d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """3D convolution with cubic kernel, isotropic stride and zero padding.

    ``w`` has shape ``(C_out, C_in, k, k, k)``, ``b`` shape ``(C_out,)``.
    """
    _expect_rank5("conv3d input", x)
    if w.data.ndim != 5 or not (w.shape[2] == w.shape[3] == w.shape[4]):
        raise ShapeError(f"conv3d weight must be (C_out, C_in, k, k, k), got {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(
            f"conv3d channel mismatch: input has {x.shape[1]}, weight expects {w.shape[1]}")
    if b.shape != (w.shape[0],):
        raise ShapeError(f"conv3d bias must be ({w.shape[0]},), got {b.shape}")
    k = w.shape[2]
    for e in x.shape[2:]:
        if e + 2 * pad < k:
            raise ShapeError(f"conv3d: spatial extent {e} too small for k={k}, pad={pad}")
    out = kernels.conv3d_forward(x.data, w.data, b.data, stride, pad)
    x_shape, w_shape = x.shape, w.shape

    def vjp(g):
        gx = kernels.conv3d_grad_input(g, w.data, x_shape, stride, pad)
        gw = kernels.conv3d_grad_weight(g, x.data, w_shape, stride, pad)
        gb = g.sum(axis=(0, 2, 3, 4))
        return gx, gw, gb

    return record_op("conv3d", out, (x, w, b), vjp)


def transposed_conv3d(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Stride-2 transposed convolution with a 2x2x2 kernel (2x upsampling).

    ``w`` has shape ``(C_out, C_in, 2, 2, 2)``; output spatial extents double.
    """
    _expect_rank5("transposed_conv3d input", x)
    if w.data.ndim != 5 or w.shape[2:] != (2, 2, 2):
        raise ShapeError(f"transposed_conv3d weight must be (C_out, C_in, 2, 2, 2), got {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(
            f"transposed_conv3d channel mismatch: input has {x.shape[1]}, weight expects {w.shape[1]}")
    if b.shape != (w.shape[0],):
        raise ShapeError(f"transposed_conv3d bias must be ({w.shape[0]},), got {b.shape}")
    out = kernels.tconv3d_forward(x.data, w.data, b.data)
    x_shape, w_shape = x.shape, w.shape

    def vjp(g):
        gx = kernels.tconv3d_grad_input(g, w.data, x_shape)
        gw = kernels.tconv3d_grad_weight(g, x.data, w_shape)
        gb = g.sum(axis=(0, 2, 3, 4))
        return gx, gw, gb

    return record_op("tconv3d", out, (x, w, b), vjp)


def maxpool3d(x: Tensor) -> Tensor:
    """2x2x2 max pooling with stride 2; ties route to the lowest flat offset."""
    _expect_rank5("maxpool3d input", x)
    for e in x.shape[2:]:
        if e % 2 != 0:
            raise ShapeError(f"maxpool3d needs even spatial extents, got {x.shape}")
    out, idx = kernels.maxpool3d_forward(x.data)
    x_shape = x.shape

    def vjp(g):
        return (kernels.maxpool3d_grad_input(g, idx, x_shape),)

    return record_op("maxpool3d", out, (x,), vjp)


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0)
    return record_op("relu", out, (x,),
                     lambda g: (np.where(x.data > 0, g, 0).astype(g.dtype),))


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ez = np.exp(d[~pos])
    out[~pos] = ez / (1.0 + ez)
    return record_op("sigmoid", out, (x,), lambda g: (g * out * (1.0 - out),))


def softmax_channels(x: Tensor) -> Tensor:
    """Softmax across axis 1 (channels); stable via max subtraction.

    The subtracted max is a constant w.r.t. the gradient, which is exact:
    softmax is invariant to per-position shifts.
    """
    if x.data.ndim < 2:
        raise ShapeError(f"softmax_channels needs rank >= 2, got shape {x.shape}")
    z = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        dot = (g * out).sum(axis=1, keepdims=True)
        return ((g - dot) * out,)

    return record_op("softmax_c", out, (x,), vjp)


def default_groups(channels: int) -> int:
    """Group count for normalization: min(8, C), falling back to C when 8 | C fails."""
    g = min(8, channels)
    return g if channels % g == 0 else channels


def group_norm(x: Tensor, gamma: Tensor, beta: Tensor, num_groups: int,
               eps: float = GROUP_NORM_EPS) -> Tensor:
    """Normalize over each (channel group x spatial volume), then affine.

    Composed entirely from engine primitives, so the tape supplies the
    gradient.  ``gamma`` and ``beta`` have shape ``(C,)``.
    """
    _expect_rank5("group_norm input", x)
    n, c, d, h, wd = x.shape
    if c % num_groups != 0:
        raise ShapeError(f"group_norm: {num_groups} groups do not divide {c} channels")
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"group_norm affine params must be ({c},), got "
                         f"{gamma.shape} and {beta.shape}")
    grouped = reshape(x, (n, num_groups, (c // num_groups) * d * h * wd))
    mean = reduce_mean(grouped, axes=(2,), keepdims=True)
    centered = sub(grouped, mean)
    var = reduce_mean(mul(centered, centered), axes=(2,), keepdims=True)
    inv_std = power(shift(var, eps), -0.5)
    normed = reshape(mul(centered, inv_std), (n, c, d, h, wd))
    gam = reshape(gamma, (1, c, 1, 1, 1))
    bet = reshape(beta, (1, c, 1, 1, 1))
    return add(mul(normed, gam), bet)


def dropout_channel_mask(rng, n: int, c: int, p: float, step: int, layer: int,
                         dtype=np.float32) -> np.ndarray:
    """Inverted-dropout mask of shape (N, C, 1, 1, 1).

    Entry (n, c) is a pure function of (seed, step, layer, n, c): the mask is
    one vectorized draw from the generator keyed (seed, "dropout", step,
    layer), so it is reproducible regardless of evaluation order or thread
    count.  Kept channels are scaled by 1/(1-p).
    """
    if not 0.0 <= p < 1.0:
        raise ShapeError(f"dropout probability must be in [0, 1), got {p}")
    dt = np.dtype(dtype)
    g = rng.generator("dropout", step, layer)
    keep = (g.random((n, c)) >= p)
    mask = keep.astype(dt) / dt.type(1.0 - p) if p > 0 else np.ones((n, c), dt)
    return mask.reshape(n, c, 1, 1, 1)


def channel_dropout(x: Tensor, mask: np.ndarray) -> Tensor:
    """Multiply by a precomputed whole-channel mask (training mode only)."""
    _expect_rank5("channel_dropout input", x)
    if mask.shape != (x.shape[0], x.shape[1], 1, 1, 1):
        raise ShapeError(f"dropout mask shape {mask.shape} does not match input {x.shape}")
    m = mask.astype(x.data.dtype, copy=False)
    return record_op("ch_dropout", x.data * m, (x,), lambda g: (g * m,))


def upsample_nearest2(x: Tensor) -> Tensor:
    """Nearest-neighbour 2x spatial upsampling; adjoint sums each 2x2x2 block."""
    _expect_rank5("upsample_nearest2 input", x)
    n, c, d, h, wd = x.shape
    out = x.data.repeat(2, axis=2).repeat(2, axis=3).repeat(2, axis=4)

    def vjp(g):
        return (g.reshape(n, c, d, 2, h, 2, wd, 2).sum(axis=(3, 5, 7)),)

    return record_op("upsample2", out, (x,), vjp)


def conv_init_std(c_in: int, k: int) -> float:
    """Weight init scale for a cubic conv: sqrt(2 / (C_in * k^3))."""
    return math.sqrt(2.0 / (c_in * k ** 3))


def init_conv_weight(rng, name: str, c_out: int, c_in: int, k: int,
                     dtype=np.float32) -> np.ndarray:
    """Fan-in normal init, keyed by the parameter name so the draw does not
    depend on creation order."""
    g = rng.generator("init", name)
    return g.normal(0.0, conv_init_std(c_in, k),
                    size=(c_out, c_in, k, k, k)).astype(dtype)
