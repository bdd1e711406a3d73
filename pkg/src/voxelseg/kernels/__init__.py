"""Backend dispatch for the volumetric kernels.

Two interchangeable implementations exist: :mod:`voxelseg.kernels.reference`
(pure numpy) and :mod:`voxelseg.kernels.jit` (numba, parallel over disjoint
output slabs).  The active one is chosen by the ``VOXELSEG_BACKEND``
environment variable (``numba``, ``numpy`` or ``auto``) at import time and can
be switched later with :func:`set_backend`.  When numba is not importable the
numpy path is used silently under ``auto``.

Both backends are bit-deterministic run to run; across backends results agree
to floating-point accumulation-order differences only.
"""

import os
import warnings

import numpy as np

from ..errors import ConfigError
from . import reference

try:
    from . import jit as _jit
    _HAVE_NUMBA = True
except ImportError:
    _jit = None
    _HAVE_NUMBA = False

__all__ = [
    "available_backends",
    "backend_name",
    "set_backend",
    "conv3d_forward",
    "conv3d_grad_input",
    "conv3d_grad_weight",
    "tconv3d_forward",
    "tconv3d_grad_input",
    "tconv3d_grad_weight",
    "maxpool3d_forward",
    "maxpool3d_grad_input",
]

_active = reference
_active_name = "numpy"


def available_backends():
    return ("numpy", "numba") if _HAVE_NUMBA else ("numpy",)


def backend_name() -> str:
    return _active_name


def set_backend(name: str) -> str:
    """Select the kernel implementation; returns the resolved backend name."""
    global _active, _active_name
    if name == "auto":
        name = "numba" if _HAVE_NUMBA else "numpy"
    if name == "numpy":
        _active = reference
    elif name == "numba":
        if not _HAVE_NUMBA:
            raise ConfigError("backend 'numba' requested but numba is not importable")
        _active = _jit
    else:
        raise ConfigError(
            f"unknown backend {name!r}; expected 'numba', 'numpy' or 'auto'")
    _active_name = name
    return name


def _init_from_env() -> None:
    req = os.environ.get("VOXELSEG_BACKEND", "auto")
    try:
        set_backend(req)
    except ConfigError:
        warnings.warn(
            f"ignoring VOXELSEG_BACKEND={req!r}; falling back to auto",
            RuntimeWarning, stacklevel=2)
        set_backend("auto")


def _c(a: np.ndarray) -> np.ndarray:
    # The jitted kernels reshape and slab-index their arguments; hand them
    # contiguous memory regardless of how the caller sliced.
    return np.ascontiguousarray(a)


def conv3d_forward(x, w, b, stride=1, pad=0):
    return _active.conv3d_forward(_c(x), _c(w), _c(b), int(stride), int(pad))


def conv3d_grad_input(gout, w, x_shape, stride=1, pad=0):
    return _active.conv3d_grad_input(_c(gout), _c(w), tuple(int(s) for s in x_shape),
                                     int(stride), int(pad))


def conv3d_grad_weight(gout, x, w_shape, stride=1, pad=0):
    return _active.conv3d_grad_weight(_c(gout), _c(x), tuple(int(s) for s in w_shape),
                                      int(stride), int(pad))


def tconv3d_forward(x, w, b):
    return _active.tconv3d_forward(_c(x), _c(w), _c(b))


def tconv3d_grad_input(gout, w, x_shape):
    return _active.tconv3d_grad_input(_c(gout), _c(w), tuple(int(s) for s in x_shape))


def tconv3d_grad_weight(gout, x, w_shape):
    return _active.tconv3d_grad_weight(_c(gout), _c(x), tuple(int(s) for s in w_shape))


def maxpool3d_forward(x):
    return _active.maxpool3d_forward(_c(x))


def maxpool3d_grad_input(gout, idx, x_shape):
    return _active.maxpool3d_grad_input(_c(gout), _c(idx),
                                        tuple(int(s) for s in x_shape))


_init_from_env()
