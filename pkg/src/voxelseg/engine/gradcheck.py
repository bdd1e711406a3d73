"""Central finite-difference verification of analytic gradients.

The checker never raises on a mismatch; it reports the worst relative error
so callers (tests, the ``gradcheck`` CLI command) decide what to do.  All
checks run in 64-bit: 32-bit rounding noise is the same order as the
truncation error of the difference quotient and makes results meaningless.
"""

from dataclasses import dataclass

import numpy as np

from ..errors import EngineError
from .tensor import Tensor, Tape

REL_FLOOR = 1e-8


@dataclass
class GradCheckResult:
    passed: bool
    max_rel_error: float
    worst_index: tuple = ()
    max_abs_diff: float = 0.0

    def __bool__(self):
        return self.passed


def _eval_scalar(f, x: Tensor) -> float:
    y = f(x)
    if not isinstance(y, Tensor):
        return float(y)
    return y.item()


def analytic_gradient(f, x: Tensor) -> np.ndarray:
    """Tape-derived gradient of the scalar ``f(x)`` w.r.t. ``x``."""
    with Tape() as tape:
        xw = tape.watch(Tensor(x.data.copy()))
        y = f(xw)
        grads = tape.backward(y)
    return grads[xw.node]


def numeric_gradient(f, x: Tensor, h: float) -> np.ndarray:
    """Central differences with per-element step ``h * max(1, |x_i|)``."""
    base = x.data.astype(np.float64).copy()
    grad = np.zeros_like(base)
    flat = base.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        step = h * max(1.0, abs(flat[i]))
        orig = flat[i]
        flat[i] = orig + step
        fp = _eval_scalar(f, Tensor(base.copy()))
        flat[i] = orig - step
        fm = _eval_scalar(f, Tensor(base.copy()))
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * step)
    return grad


def finite_diff_check(f, x: Tensor, h: float = 1e-4, tol: float = 1e-4,
                      atol: float = 1e-8) -> GradCheckResult:
    """Compare tape gradients of ``f`` against central differences at ``x``.

    ``f`` must be deterministic and map a tensor to a scalar.  Relative error
    per element uses ``max(|analytic|, |numeric|, 1e-8)`` as denominator.
    Elements where the two gradients differ by less than ``atol`` count as
    exact agreement: when a parameter has (near-)zero true gradient, the
    central difference is pure cancellation noise and no relative criterion
    is meaningful there.
    """
    if not isinstance(x, Tensor):
        x = Tensor(np.asarray(x))
    if x.data.dtype != np.float64:
        raise EngineError("finite_diff_check requires a float64 input tensor")
    analytic = analytic_gradient(f, x)
    numeric = numeric_gradient(f, x, h)
    diff = np.abs(analytic - numeric)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), REL_FLOOR)
    rel = np.where(diff <= atol, 0.0, diff / denom)
    worst = int(rel.argmax())
    max_err = float(rel.reshape(-1)[worst])
    return GradCheckResult(max_err <= tol, max_err,
                           np.unravel_index(worst, rel.shape) if rel.ndim else (),
                           float(diff.max()))


def check_grads(f, inputs, h: float = 1e-4, tol: float = 1e-4) -> GradCheckResult:
    """Check ``f(*inputs)`` against finite differences in every input.

    ``f`` takes the full input list; each input is varied in turn while the
    others stay fixed.  Returns the worst result across inputs.
    """
    inputs = [t if isinstance(t, Tensor) else Tensor(np.asarray(t)) for t in inputs]
    worst = GradCheckResult(True, 0.0)
    for pos in range(len(inputs)):
        def f_single(xi, _pos=pos):
            args = [Tensor(t.data.copy()) for t in inputs]
            args[_pos] = xi
            return f(*args)

        res = finite_diff_check(f_single, inputs[pos], h=h, tol=tol)
        if res.max_rel_error >= worst.max_rel_error:
            worst = GradCheckResult(worst.passed and res.passed,
                                    res.max_rel_error, res.worst_index,
                                    max(worst.max_abs_diff, res.max_abs_diff))
        else:
            worst = GradCheckResult(worst.passed and res.passed,
                                    worst.max_rel_error, worst.worst_index,
                                    max(worst.max_abs_diff, res.max_abs_diff))
    return worst
