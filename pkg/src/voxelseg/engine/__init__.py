"""Tensors, seeded randomness, and the reverse-mode differentiation tape."""

from .rng import Rng, STREAMS
from .tensor import (
    Tensor,
    Tape,
    Node,
    active_tape,
    backward,
    gradients_by_name,
    record_op,
    zeros,
    full,
    normal,
    from_array,
    zeros_like,
    ones_like,
)
from .ops import (
    add,
    sub,
    mul,
    div,
    neg,
    scale,
    shift,
    map_elementwise,
    power,
    log,
    clamp,
    reduce_sum,
    reduce_mean,
    reduce_max,
    concat,
    crop,
    pad,
    reshape,
)
from .gradcheck import GradCheckResult, finite_diff_check, check_grads

__all__ = [
    "Rng", "STREAMS", "Tensor", "Tape", "Node", "active_tape", "backward",
    "gradients_by_name", "record_op", "zeros", "full", "normal", "from_array",
    "zeros_like", "ones_like", "add", "sub", "mul", "div", "neg", "scale",
    "shift", "map_elementwise", "power", "log", "clamp", "reduce_sum",
    "reduce_mean", "reduce_max", "concat", "crop", "pad", "reshape",
    "GradCheckResult", "finite_diff_check", "check_grads",
]
