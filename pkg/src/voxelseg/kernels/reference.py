"""Pure-numpy implementations of the hot volumetric kernels.

These are the fallback path when numba is unavailable (or when
``VOXELSEG_BACKEND=numpy`` forces them) and the ground they are benchmarked
against.  Convolutions iterate over the k^3 kernel offsets and reduce each
offset with one BLAS-backed einsum, which keeps peak memory at one extra
activation-sized array.
"""

import numpy as np


def _out_extent(n: int, pad: int, k: int, stride: int) -> int:
    return (n + 2 * pad - k) // stride + 1


def _pad5(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    w = ((0, 0), (0, 0), (pad, pad), (pad, pad), (pad, pad))
    return np.pad(x, w)


def conv3d_forward(x, w, b, stride, pad):
    n, cin, d, h, wd = x.shape
    cout, _, k, _, _ = w.shape
    do, ho, wo = (_out_extent(e, pad, k, stride) for e in (d, h, wd))
    xp = _pad5(x, pad)
    out = np.broadcast_to(b.reshape(1, cout, 1, 1, 1),
                          (n, cout, do, ho, wo)).astype(x.dtype, copy=True)
    for i in range(k):
        for j in range(k):
            for l in range(k):
                v = xp[:, :,
                       i:i + stride * (do - 1) + 1:stride,
                       j:j + stride * (ho - 1) + 1:stride,
                       l:l + stride * (wo - 1) + 1:stride]
                out += np.einsum("oc,ncdhw->nodhw", w[:, :, i, j, l], v,
                                 optimize=True)
    return out


def conv3d_grad_input(gout, w, x_shape, stride, pad):
    n, cin, d, h, wd = x_shape
    cout, _, k, _, _ = w.shape
    _, _, do, ho, wo = gout.shape
    gxp = np.zeros((n, cin, d + 2 * pad, h + 2 * pad, wd + 2 * pad),
                   dtype=gout.dtype)
    for i in range(k):
        for j in range(k):
            for l in range(k):
                contrib = np.einsum("oc,nodhw->ncdhw", w[:, :, i, j, l], gout,
                                    optimize=True)
                gxp[:, :,
                    i:i + stride * (do - 1) + 1:stride,
                    j:j + stride * (ho - 1) + 1:stride,
                    l:l + stride * (wo - 1) + 1:stride] += contrib
    if pad == 0:
        return gxp
    return np.ascontiguousarray(gxp[:, :, pad:pad + d, pad:pad + h, pad:pad + wd])


def conv3d_grad_weight(gout, x, w_shape, stride, pad):
    cout, cin, k, _, _ = w_shape
    _, _, do, ho, wo = gout.shape
    xp = _pad5(x, pad)
    gw = np.empty(w_shape, dtype=gout.dtype)
    for i in range(k):
        for j in range(k):
            for l in range(k):
                v = xp[:, :,
                       i:i + stride * (do - 1) + 1:stride,
                       j:j + stride * (ho - 1) + 1:stride,
                       l:l + stride * (wo - 1) + 1:stride]
                gw[:, :, i, j, l] = np.einsum("nodhw,ncdhw->oc", gout, v,
                                              optimize=True)
    return gw


# Transposed convolution, fixed k = stride = 2 (the decoder upsampler).
# out[n,o,2d+i,2h+j,2w+l] = b[o] + sum_c x[n,c,d,h,w] * w[o,c,i,j,l]

def tconv3d_forward(x, w, b):
    n, cin, d, h, wd = x.shape
    cout = w.shape[0]
    t = np.einsum("ncdhw,ocijl->nodihjwl", x, w, optimize=True)
    out = t.reshape(n, cout, 2 * d, 2 * h, 2 * wd)
    out += b.reshape(1, cout, 1, 1, 1)
    return np.ascontiguousarray(out)


def tconv3d_grad_input(gout, w, x_shape):
    n, cin, d, h, wd = x_shape
    cout = w.shape[0]
    gr = gout.reshape(n, cout, d, 2, h, 2, wd, 2)
    return np.einsum("nodihjwl,ocijl->ncdhw", gr, w, optimize=True)


def tconv3d_grad_weight(gout, x, w_shape):
    n, cin, d, h, wd = x.shape
    cout = w_shape[0]
    gr = gout.reshape(n, cout, d, 2, h, 2, wd, 2)
    return np.einsum("nodihjwl,ncdhw->ocijl", gr, x, optimize=True)


# Max pooling, fixed k = stride = 2.  Returned indices are flat offsets into
# the (D, H, W) spatial volume; within a tied window the smallest flat offset
# wins, which matches lexicographic (i, j, l) window order.

def maxpool3d_forward(x):
    n, c, d, h, wd = x.shape
    do, ho, wo = d // 2, h // 2, wd // 2
    xr = x.reshape(n, c, do, 2, ho, 2, wo, 2)
    win = np.ascontiguousarray(xr.transpose(0, 1, 2, 4, 6, 3, 5, 7))
    win = win.reshape(n, c, do, ho, wo, 8)
    sel = win.argmax(axis=-1)
    out = np.take_along_axis(win, sel[..., None], axis=-1)[..., 0]
    i, j, l = sel // 4, (sel // 2) % 2, sel % 2
    dz = 2 * np.arange(do).reshape(1, 1, do, 1, 1) + i
    dy = 2 * np.arange(ho).reshape(1, 1, 1, ho, 1) + j
    dx = 2 * np.arange(wo).reshape(1, 1, 1, 1, wo) + l
    idx = (dz * h + dy) * wd + dx
    return np.ascontiguousarray(out), idx.astype(np.int64)


def maxpool3d_grad_input(gout, idx, x_shape):
    n, c, d, h, wd = x_shape
    gx = np.zeros((n, c, d * h * wd), dtype=gout.dtype)
    np.put_along_axis(gx, idx.reshape(n, c, -1), gout.reshape(n, c, -1), axis=2)
    return gx.reshape(x_shape)
