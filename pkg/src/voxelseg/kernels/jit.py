"""Numba-jitted mirrors of the reference kernels.

Every kernel parallelizes over slabs that own disjoint regions of the output
array (batch x channel, or weight channel pairs), so there are no cross-thread
accumulations and results are bit-identical from run to run regardless of
thread count.  Accumulators are float64 even for float32 tensors; the store
downcasts at the end.

The conv3d kernels hoist the weight to a scalar and keep the innermost loop
on the contiguous W axis with a plain bounds check.  Factoring the bounds
computation into a helper (even with inline="always") defeats LLVM's loop
optimization here and costs 3x, so the checks stay inline.
"""

import numpy as np
from numba import njit, prange


@njit(parallel=True, cache=True)
def conv3d_forward(x, w, b, stride, pad):
    n, cin, d, h, wd = x.shape
    cout, _, k, _, _ = w.shape
    do = (d + 2 * pad - k) // stride + 1
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    out = np.empty((n, cout, do, ho, wo), dtype=x.dtype)
    for p in prange(n * cout):
        nn = p // cout
        o = p % cout
        acc = np.full((do, ho, wo), float(b[o]), dtype=np.float64)
        for c in range(cin):
            for i in range(k):
                for j in range(k):
                    for l in range(k):
                        wv = float(w[o, c, i, j, l])
                        xbase = l - pad
                        for dz in range(do):
                            zi = dz * stride - pad + i
                            if zi < 0 or zi >= d:
                                continue
                            for dy in range(ho):
                                yj = dy * stride - pad + j
                                if yj < 0 or yj >= h:
                                    continue
                                arow = acc[dz, dy]
                                xrow = x[nn, c, zi, yj]
                                for dx in range(wo):
                                    xl = dx * stride + xbase
                                    if 0 <= xl < wd:
                                        arow[dx] += wv * xrow[xl]
        ob = out[nn, o]
        for dz in range(do):
            for dy in range(ho):
                for dx in range(wo):
                    ob[dz, dy, dx] = acc[dz, dy, dx]
    return out


@njit(parallel=True, cache=True)
def conv3d_grad_input(gout, w, x_shape, stride, pad):
    n, cin, d, h, wd = x_shape
    cout, _, k, _, _ = w.shape
    _, _, do, ho, wo = gout.shape
    gx = np.empty((n, cin, d, h, wd), dtype=gout.dtype)
    for p in prange(n * cin):
        nn = p // cin
        c = p % cin
        acc = np.zeros((d, h, wd), dtype=np.float64)
        for o in range(cout):
            for i in range(k):
                for j in range(k):
                    for l in range(k):
                        wv = float(w[o, c, i, j, l])
                        xbase = l - pad
                        for dz in range(do):
                            zi = dz * stride - pad + i
                            if zi < 0 or zi >= d:
                                continue
                            for dy in range(ho):
                                yj = dy * stride - pad + j
                                if yj < 0 or yj >= h:
                                    continue
                                grow = gout[nn, o, dz, dy]
                                arow = acc[zi, yj]
                                for dx in range(wo):
                                    xl = dx * stride + xbase
                                    if 0 <= xl < wd:
                                        arow[xl] += wv * grow[dx]
        gb = gx[nn, c]
        for zi in range(d):
            for yj in range(h):
                for xl in range(wd):
                    gb[zi, yj, xl] = acc[zi, yj, xl]
    return gx


@njit(parallel=True, cache=True)
def conv3d_grad_weight(gout, x, w_shape, stride, pad):
    cout, cin, k, _, _ = w_shape
    n, _, d, h, wd = x.shape
    _, _, do, ho, wo = gout.shape
    gw = np.empty((cout, cin, k, k, k), dtype=gout.dtype)
    for p in prange(cout * cin):
        o = p // cin
        c = p % cin
        for i in range(k):
            for j in range(k):
                for l in range(k):
                    xbase = l - pad
                    acc = 0.0
                    for nn in range(n):
                        for dz in range(do):
                            zi = dz * stride - pad + i
                            if zi < 0 or zi >= d:
                                continue
                            for dy in range(ho):
                                yj = dy * stride - pad + j
                                if yj < 0 or yj >= h:
                                    continue
                                grow = gout[nn, o, dz, dy]
                                xrow = x[nn, c, zi, yj]
                                for dx in range(wo):
                                    xl = dx * stride + xbase
                                    if 0 <= xl < wd:
                                        acc += grow[dx] * xrow[xl]
                    gw[o, c, i, j, l] = acc
    return gw


@njit(parallel=True, cache=True)
def tconv3d_forward(x, w, b):
    n, cin, d, h, wd = x.shape
    cout = w.shape[0]
    out = np.empty((n, cout, 2 * d, 2 * h, 2 * wd), dtype=x.dtype)
    for p in prange(n * cout):
        nn = p // cout
        o = p % cout
        for zd in range(d):
            for yh in range(h):
                for xw in range(wd):
                    for i in range(2):
                        for j in range(2):
                            for l in range(2):
                                acc = float(b[o])
                                for c in range(cin):
                                    acc += float(x[nn, c, zd, yh, xw]) * float(w[o, c, i, j, l])
                                out[nn, o, 2 * zd + i, 2 * yh + j, 2 * xw + l] = acc
    return out


@njit(parallel=True, cache=True)
def tconv3d_grad_input(gout, w, x_shape):
    n, cin, d, h, wd = x_shape
    cout = w.shape[0]
    gx = np.empty((n, cin, d, h, wd), dtype=gout.dtype)
    for p in prange(n * cin):
        nn = p // cin
        c = p % cin
        for zd in range(d):
            for yh in range(h):
                for xw in range(wd):
                    acc = 0.0
                    for o in range(cout):
                        for i in range(2):
                            for j in range(2):
                                for l in range(2):
                                    acc += float(gout[nn, o, 2 * zd + i, 2 * yh + j, 2 * xw + l]) * float(w[o, c, i, j, l])
                    gx[nn, c, zd, yh, xw] = acc
    return gx


@njit(parallel=True, cache=True)
def tconv3d_grad_weight(gout, x, w_shape):
    cout, cin = w_shape[0], w_shape[1]
    n, _, d, h, wd = x.shape
    gw = np.empty((cout, cin, 2, 2, 2), dtype=gout.dtype)
    for p in prange(cout * cin):
        o = p // cin
        c = p % cin
        for i in range(2):
            for j in range(2):
                for l in range(2):
                    acc = 0.0
                    for nn in range(n):
                        for zd in range(d):
                            for yh in range(h):
                                grow = gout[nn, o, 2 * zd + i, 2 * yh + j]
                                xrow = x[nn, c, zd, yh]
                                for xw in range(wd):
                                    acc += float(grow[2 * xw + l]) * float(xrow[xw])
                    gw[o, c, i, j, l] = acc
    return gw


@njit(parallel=True, cache=True)
def maxpool3d_forward(x):
    n, c, d, h, wd = x.shape
    do, ho, wo = d // 2, h // 2, wd // 2
    out = np.empty((n, c, do, ho, wo), dtype=x.dtype)
    idx = np.empty((n, c, do, ho, wo), dtype=np.int64)
    for p in prange(n * c):
        nn = p // c
        cc = p % c
        for zd in range(do):
            for yh in range(ho):
                for xw in range(wo):
                    best = x[nn, cc, 2 * zd, 2 * yh, 2 * xw]
                    boff = (2 * zd * h + 2 * yh) * wd + 2 * xw
                    for i in range(2):
                        for j in range(2):
                            for l in range(2):
                                v = x[nn, cc, 2 * zd + i, 2 * yh + j, 2 * xw + l]
                                if v > best:
                                    best = v
                                    boff = ((2 * zd + i) * h + 2 * yh + j) * wd + 2 * xw + l
                    out[nn, cc, zd, yh, xw] = best
                    idx[nn, cc, zd, yh, xw] = boff
    return out, idx


@njit(parallel=True, cache=True)
def maxpool3d_grad_input(gout, idx, x_shape):
    n, c, d, h, wd = x_shape
    gx = np.zeros((n, c, d, h, wd), dtype=gout.dtype)
    flat = gx.reshape(n, c, d * h * wd)
    gflat = gout.reshape(n, c, -1)
    iflat = idx.reshape(n, c, -1)
    for p in prange(n * c):
        nn = p // c
        cc = p % c
        for q in range(gflat.shape[2]):
            flat[nn, cc, iflat[nn, cc, q]] += gflat[nn, cc, q]
    return gx
