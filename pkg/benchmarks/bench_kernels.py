"""Timing comparison of the numba and numpy kernel backends.

Run directly:  python3 benchmarks/bench_kernels.py [--repeat N]

Prints per-kernel best-of-N wall times for both backends plus the speedup,
and cross-checks that the two backends agree to 1e-10 on every output.  The
first numba call per kernel compiles; a warmup round keeps that out of the
timings.
"""

import argparse
import time

import numpy as np

from voxelseg import kernels
from voxelseg.kernels import jit as jit_backend
from voxelseg.kernels import reference as ref_backend


def _cases(gen):
    x = gen.normal(size=(1, 8, 32, 32, 32))
    w3 = gen.normal(size=(16, 8, 3, 3, 3))
    b3 = gen.normal(size=(16,))
    g = gen.normal(size=(1, 16, 32, 32, 32))
    wt = gen.normal(size=(8, 16, 2, 2, 2))
    bt = gen.normal(size=(8,))
    xt = gen.normal(size=(1, 16, 16, 16, 16))
    gt = gen.normal(size=(1, 8, 32, 32, 32))
    cases = [
        ("conv3d_forward", "conv3d_forward", (x, w3, b3), {"stride": 1, "pad": 1}),
        ("conv3d_grad_input", "conv3d_grad_input", (g, w3, x.shape), {"stride": 1, "pad": 1}),
        ("conv3d_grad_weight", "conv3d_grad_weight", (g, x, w3.shape), {"stride": 1, "pad": 1}),
        ("tconv3d_forward", "tconv3d_forward", (xt, wt, bt), {}),
        ("tconv3d_grad_input", "tconv3d_grad_input", (gt, wt, xt.shape), {}),
        ("tconv3d_grad_weight", "tconv3d_grad_weight", (gt, xt, wt.shape), {}),
        ("maxpool3d_forward", "maxpool3d_forward", (x,), {}),
    ]
    return cases


def _best_of(fn, args, kwargs, repeat):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args, **kwargs)
        best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5, help="best-of-N timing")
    args = ap.parse_args()

    gen = np.random.default_rng(0)
    cases = _cases(gen)

    print(f"available backends: {kernels.available_backends()}")
    if "numba" not in kernels.available_backends():
        print("numba not importable; nothing to compare")
        return

    # warmup triggers jit compilation outside the timed region
    for _name, attr, fargs, fkw in cases:
        getattr(jit_backend, attr)(*fargs, **fkw)

    print(f"\n{'kernel':<22s} {'numpy':>10s} {'numba':>10s} {'speedup':>9s} {'max|diff|':>11s}")
    for name, attr, fargs, fkw in cases:
        t_np, out_np = _best_of(getattr(ref_backend, attr), fargs, fkw, args.repeat)
        t_nb, out_nb = _best_of(getattr(jit_backend, attr), fargs, fkw, args.repeat)
        if isinstance(out_np, tuple):           # maxpool returns (values, indices)
            diff = max(float(np.abs(a - b).max()) for a, b in zip(out_np, out_nb))
        else:
            diff = float(np.abs(out_np - out_nb).max())
        status = "" if diff <= 1e-10 else "  MISMATCH"
        print(f"{name:<22s} {t_np*1e3:9.2f}ms {t_nb*1e3:9.2f}ms {t_np/t_nb:8.1f}x "
              f"{diff:11.2e}{status}")


if __name__ == "__main__":
    main()
