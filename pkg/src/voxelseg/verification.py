"""Named finite-difference verification suite.

One registry of named scopes, each building small seeded problem instances
and comparing tape gradients against central differences in 64-bit.  The
``gradcheck`` CLI command and the acceptance tests both call into this
module so there is exactly one definition of "the gradient suite".

Stochastic pieces are frozen per instance: channel dropout runs against a
fixed mask, the end-to-end network runs in eval mode.  The mask's gradient
path is identical in train and eval, only mask generation differs.
"""

import time
from dataclasses import dataclass

import numpy as np

from .attention import (attention_gate_original, attention_gate_same_level,
                        gate_param_shapes)
from .engine import Rng, Tensor, check_grads
from .engine import ops
from .errors import ConfigError
from .layers import (channel_dropout, conv3d, dropout_channel_mask, group_norm,
                     maxpool3d, relu, sigmoid, softmax_channels,
                     transposed_conv3d)
from .network import ArchitectureConfig, forward, parameter_shapes
from .objectives import LossConfig, dice_loss, focal_loss, total_loss

DEFAULT_SEEDS = 10
TOL = 1e-4


@dataclass
class CheckOutcome:
    scope: str
    seed: int
    passed: bool
    max_rel_error: float
    max_abs_diff: float
    elapsed_s: float


def _gen(seed: int):
    return np.random.default_rng(seed)


def _project(t: Tensor, r: np.ndarray) -> Tensor:
    """Scalar loss <t, r> with a fixed random probe; exercises every output
    element with distinct weights, unlike plain sum."""
    return ops.reduce_sum(ops.mul(t, Tensor(r)))


def _spread(gen, shape, spacing=0.05):
    """Distinct values with guaranteed separation, so argmax-style ops cannot
    flip winners inside a finite-difference step."""
    n = int(np.prod(shape))
    vals = gen.permutation(n).astype(np.float64) * spacing
    return vals.reshape(shape) + gen.uniform(-spacing / 4, spacing / 4)


def _onehot_target(gen, shape):
    c = shape[1]
    labels = gen.integers(0, c, size=(shape[0],) + shape[2:])
    out = np.zeros(shape, dtype=np.float64)
    for i in range(c):
        out[:, i][labels == i] = 1.0
    return out


# --- scope builders: each returns (f, inputs) --------------------------------

def _case_conv3d(seed):
    gen = _gen(seed)
    stride, pad, k = [(1, 1, 3), (1, 0, 1), (2, 1, 3), (2, 0, 2)][seed % 4]
    x = gen.normal(size=(1, 2, 4, 4, 4))
    w = gen.normal(size=(3, 2, k, k, k))
    b = gen.normal(size=(3,))
    do = (4 + 2 * pad - k) // stride + 1
    r = gen.normal(size=(1, 3, do, do, do))
    return (lambda xt, wt, bt: _project(conv3d(xt, wt, bt, stride=stride, pad=pad), r),
            [x, w, b])


def _case_transposed_conv3d(seed):
    gen = _gen(seed)
    x = gen.normal(size=(1, 3, 3, 3, 3))
    w = gen.normal(size=(2, 3, 2, 2, 2))     # (C_out, C_in, 2, 2, 2)
    b = gen.normal(size=(2,))
    r = gen.normal(size=(1, 2, 6, 6, 6))
    return (lambda xt, wt, bt: _project(transposed_conv3d(xt, wt, bt), r), [x, w, b])


def _case_maxpool3d(seed):
    gen = _gen(seed)
    x = _spread(gen, (2, 2, 4, 4, 4))
    r = gen.normal(size=(2, 2, 2, 2, 2))
    return (lambda xt: _project(maxpool3d(xt), r), [x])


def _case_group_norm(seed):
    gen = _gen(seed)
    x = gen.normal(size=(2, 4, 3, 3, 3))
    gamma = gen.normal(size=(4,)) + 1.0
    beta = gen.normal(size=(4,))
    r = gen.normal(size=(2, 4, 3, 3, 3))
    return (lambda xt, gt, bt: _project(group_norm(xt, gt, bt, num_groups=2), r),
            [x, gamma, beta])


def _case_relu(seed):
    gen = _gen(seed)
    x = gen.normal(size=(2, 3, 3, 3, 3))
    x = x + 0.2 * np.where(x >= 0, 1.0, -1.0)     # keep clear of the kink
    r = gen.normal(size=x.shape)
    return (lambda xt: _project(relu(xt), r), [x])


def _case_sigmoid(seed):
    gen = _gen(seed)
    x = gen.normal(size=(2, 3, 3, 3, 3)) * 2.0
    r = gen.normal(size=x.shape)
    return (lambda xt: _project(sigmoid(xt), r), [x])


def _case_softmax(seed):
    gen = _gen(seed)
    x = gen.normal(size=(1, 4, 3, 3, 3))
    r = gen.normal(size=x.shape)
    return (lambda xt: _project(softmax_channels(xt), r), [x])


def _case_channel_dropout(seed):
    gen = _gen(seed)
    x = gen.normal(size=(2, 6, 3, 3, 3))
    mask = dropout_channel_mask(Rng(seed), n=2, c=6, p=0.3, step=seed, layer=0,
                                dtype=np.float64)
    r = gen.normal(size=x.shape)
    return (lambda xt: _project(channel_dropout(xt, mask), r), [x])


def _gate_case(seed, gating):
    gen = _gen(seed)
    c_x, c_g = 4, 3
    shapes = gate_param_shapes(c_x, c_g)
    params = [gen.normal(size=shapes[k]) * 0.5
              for k in ("wx/w", "wx/b", "wg/w", "wg/b", "psi/w", "psi/b")]
    x = gen.normal(size=(1, c_x, 4, 4, 4))
    if gating == "same_level":
        g = gen.normal(size=(1, c_g, 4, 4, 4))
        fn = attention_gate_same_level
    else:
        g = gen.normal(size=(1, c_g, 2, 2, 2))
        fn = attention_gate_original
    r = gen.normal(size=x.shape)
    def f(xt, gt, *ps):
        gated, _alpha = fn(xt, gt, *ps)
        return _project(gated, r)
    return f, [x, g] + params


def _case_attention_same_level(seed):
    return _gate_case(seed, "same_level")


def _case_attention_original(seed):
    return _gate_case(seed, "original")


def _loss_case(seed, which):
    gen = _gen(seed)
    shape = (1, 3, 2, 2, 2)
    logits = gen.normal(size=shape)
    target = _onehot_target(gen, shape)
    def f(lt):
        probs = softmax_channels(lt)
        if which == "dice":
            return dice_loss(probs, Tensor(target))
        if which == "focal":
            return focal_loss(probs, Tensor(target))
        return total_loss(probs, Tensor(target), LossConfig())
    return f, [logits]


def _case_dice_loss(seed):
    return _loss_case(seed, "dice")


def _case_focal_loss(seed):
    return _loss_case(seed, "focal")


def _case_total_loss(seed):
    return _loss_case(seed, "total")


_TINY = ArchitectureConfig(in_channels=1, num_classes=2, stage_channels=(2, 4),
                           convs_per_stage=(1, 1), decoders=2,
                           attention="per_decoder_per_level",
                           gating="same_level", downsample="maxpool")


def _case_network(seed):
    gen = _gen(seed)
    shapes = parameter_shapes(_TINY)
    names = sorted(shapes)
    values = [gen.normal(size=shapes[k], scale=0.5) + (1.0 if k.endswith("gamma") else 0.0)
              for k in names]
    x = gen.normal(size=(1, 1, 4, 4, 4))
    target = _onehot_target(gen, (1, 2, 4, 4, 4))
    def f(xt, *ps):
        params = dict(zip(names, ps))
        art = forward(params, _TINY, xt, mode="eval")
        probs = softmax_channels(art.logits)
        return total_loss(probs, Tensor(target), LossConfig())
    return f, [x] + values


SCOPES = {
    "conv3d": _case_conv3d,
    "transposed_conv3d": _case_transposed_conv3d,
    "maxpool3d": _case_maxpool3d,
    "group_norm": _case_group_norm,
    "relu": _case_relu,
    "sigmoid": _case_sigmoid,
    "softmax": _case_softmax,
    "channel_dropout": _case_channel_dropout,
    "attention_same_level": _case_attention_same_level,
    "attention_original": _case_attention_original,
    "dice_loss": _case_dice_loss,
    "focal_loss": _case_focal_loss,
    "total_loss": _case_total_loss,
    "network": _case_network,
}


def run_scope(scope: str, seeds: int = DEFAULT_SEEDS, tol: float = TOL) -> list:
    if scope not in SCOPES:
        raise ConfigError(
            f"unknown gradcheck scope {scope!r}; valid scopes: "
            + ", ".join(sorted(SCOPES)) + ", all")
    out = []
    for seed in range(seeds):
        f, inputs = SCOPES[scope](seed)
        t0 = time.perf_counter()
        res = check_grads(f, inputs, tol=tol)
        out.append(CheckOutcome(scope, seed, res.passed, res.max_rel_error,
                                res.max_abs_diff, time.perf_counter() - t0))
    return out


def run_suite(scopes=None, seeds: int = DEFAULT_SEEDS, tol: float = TOL) -> list:
    names = list(SCOPES) if scopes is None else list(scopes)
    out = []
    for name in names:
        out.extend(run_scope(name, seeds=seeds, tol=tol))
    return out


def summarize(outcomes) -> str:
    lines = []
    by_scope = {}
    for o in outcomes:
        by_scope.setdefault(o.scope, []).append(o)
    for scope, group in by_scope.items():
        worst = max(g.max_rel_error for g in group)
        worst_abs = max(g.max_abs_diff for g in group)
        ok = all(g.passed for g in group)
        took = sum(g.elapsed_s for g in group)
        lines.append(f"{'PASS' if ok else 'FAIL'}  {scope:<22s} seeds={len(group):<3d} "
                     f"max_rel_err={worst:.3e}  max_abs_diff={worst_abs:.3e}  {took:6.2f}s")
    total_ok = all(o.passed for o in outcomes)
    lines.append(f"{'PASS' if total_ok else 'FAIL'}  overall")
    return "\n".join(lines)


def suite_passed(outcomes) -> bool:
    return all(o.passed for o in outcomes)
