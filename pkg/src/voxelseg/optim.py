"""Parameter updates and learning-rate schedules.

AdamW with the AMSGrad second-moment maximum and decoupled weight decay:

    m <- b1*m + (1-b1)*g        v <- b2*v + (1-b2)*g^2
    vmax <- max(vmax, v)
    theta <- theta - lr * mhat / (sqrt(vmax_hat) + eps) - lr * wd * theta

where mhat, vmax_hat carry the usual bias corrections.  Schedules are pure
functions of the step index so they can be queried, logged and unit-tested in
isolation.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .engine import Tensor
from .errors import ConfigError, NumericalError


@dataclass
class AdamWState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    vmax: dict = field(default_factory=dict)


def adamw_init(params: dict, beta1: float = 0.9, beta2: float = 0.999,
               eps: float = 1e-8, weight_decay: float = 1e-4) -> AdamWState:
    state = AdamWState(beta1=beta1, beta2=beta2, eps=eps, weight_decay=weight_decay)
    for name, t in params.items():
        state.m[name] = np.zeros_like(t.data)
        state.v[name] = np.zeros_like(t.data)
        state.vmax[name] = np.zeros_like(t.data)
    return state


def adamw_step(params: dict, grads: dict, state: AdamWState, lr: float) -> None:
    """One in-place update.  ``grads`` maps name -> ndarray aligned with
    ``params``.  A non-finite gradient aborts before any mutation."""
    if lr < 0:
        raise ConfigError(f"learning rate must be >= 0, got {lr}")
    if set(grads) != set(params):
        missing = set(params) ^ set(grads)
        raise ConfigError(f"gradient/parameter name mismatch: {sorted(missing)[:5]}")
    for name in params:
        if not np.all(np.isfinite(grads[name])):
            raise NumericalError(
                f"non-finite gradient for {name!r} at optimizer step {state.step + 1}")

    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = grads[name].astype(p.data.dtype, copy=False)
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        np.maximum(state.vmax[name], v, out=state.vmax[name])
        denom = np.sqrt(state.vmax[name] / bc2) + state.eps
        # decay term uses the pre-update value: theta - lr*A - lr*wd*theta
        update = lr * ((m / bc1) / denom)
        if state.weight_decay:
            update += lr * state.weight_decay * p.data
        p.data -= update


@dataclass(frozen=True)
class ScheduleConfig:
    kind: str = "onecycle"          # onecycle | cawr
    total_steps: int = 1
    max_lr: float = 1e-3
    pct_start: float = 0.3
    div_factor: float = 25.0
    final_div_factor: float = 1e4
    t0: int = 10                    # first CAWR cycle length, in steps
    t_mult: int = 2
    min_lr: float = 0.0

    def validate(self) -> None:
        if self.kind not in ("onecycle", "cawr"):
            raise ConfigError(f"schedule kind must be onecycle or cawr, got {self.kind!r}")
        if self.total_steps < 1:
            raise ConfigError("total_steps must be >= 1")
        if not (0.0 < self.pct_start < 1.0):
            raise ConfigError("pct_start must be in (0, 1)")
        if self.div_factor <= 1.0 or self.final_div_factor <= 1.0:
            raise ConfigError("div factors must be > 1")
        if self.t0 < 1 or self.t_mult not in (1, 2):
            raise ConfigError("cawr needs t0 >= 1 and t_mult in {1, 2}")
        if self.max_lr <= 0 or self.min_lr < 0:
            raise ConfigError("learning rates must be positive (min_lr >= 0)")


def onecycle_lr(step: int, cfg: ScheduleConfig) -> float:
    """Cosine warmup from max_lr/div_factor to max_lr over pct_start of the
    run, then cosine anneal down to max_lr/final_div_factor."""
    cfg.validate()
    if not 0 <= step <= cfg.total_steps:
        raise ConfigError(f"step {step} outside [0, {cfg.total_steps}]")
    low = cfg.max_lr / cfg.div_factor
    final = cfg.max_lr / cfg.final_div_factor
    peak = cfg.pct_start * cfg.total_steps
    if step <= peak:
        frac = step / peak
        return low + (cfg.max_lr - low) * (1.0 - math.cos(math.pi * frac)) / 2.0
    frac = (step - peak) / (cfg.total_steps - peak)
    return final + (cfg.max_lr - final) * (1.0 + math.cos(math.pi * frac)) / 2.0


def cawr_lr(step: int, cfg: ScheduleConfig) -> float:
    """Cosine annealing with warm restarts; cycle i has length t0 * t_mult^i
    and the lr is exactly max_lr at each restart boundary."""
    cfg.validate()
    if step < 0:
        raise ConfigError(f"step must be >= 0, got {step}")
    s = step
    length = cfg.t0
    while s >= length:
        s -= length
        length *= cfg.t_mult
    if s == 0:
        return cfg.max_lr
    return cfg.min_lr + (cfg.max_lr - cfg.min_lr) * (1.0 + math.cos(math.pi * s / length)) / 2.0


def schedule_lr(step: int, cfg: ScheduleConfig) -> float:
    return onecycle_lr(step, cfg) if cfg.kind == "onecycle" else cawr_lr(step, cfg)
