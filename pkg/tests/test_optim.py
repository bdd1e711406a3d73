"""AdamW/AMSGrad update arithmetic and learning-rate schedule conformance."""

import numpy as np
import pytest

import oracles
from voxelseg.engine import Tensor
from voxelseg.errors import ConfigError, NumericalError
from voxelseg.optim import (
    ScheduleConfig, adamw_init, adamw_step, cawr_lr, onecycle_lr, schedule_lr,
)


def _scalar_param(v):
    return {"p": Tensor(np.array([v], dtype=np.float64))}


def test_hand_trace_three_steps():
    grads_seq = [0.3, -0.2, 0.05]
    lr = 0.01
    params = _scalar_param(0.5)
    state = adamw_init(params, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=1e-4)
    want = oracles.adamw_trace_scalar(0.5, grads_seq, lr)
    for g, expected in zip(grads_seq, want):
        adamw_step(params, {"p": np.array([g])}, state, lr)
        assert abs(float(params["p"].data[0]) - expected) <= 1e-12


def test_bias_correction_first_step():
    # after one step with grad g, mhat == g and vhat == g^2 exactly,
    # so the update is lr * g / (|g| + eps) before decay
    g = 0.37
    lr = 0.01
    params = _scalar_param(1.0)
    state = adamw_init(params, weight_decay=0.0)
    adamw_step(params, {"p": np.array([g])}, state, lr)
    want = 1.0 - lr * (g / (abs(g) + 1e-8))
    assert abs(float(params["p"].data[0]) - want) <= 1e-15


def test_vmax_monotone_over_random_steps(gen):
    params = {"w": Tensor(gen.standard_normal(16))}
    state = adamw_init(params)
    prev = state.vmax["w"].copy()
    for _ in range(1000):
        g = gen.standard_normal(16) * 10.0 ** gen.integers(-3, 3)
        adamw_step(params, {"w": g}, state, lr=1e-3)
        cur = state.vmax["w"]
        assert np.all(cur >= prev)
        assert np.all(cur >= state.v["w"])
        prev = cur.copy()


def test_zero_grad_decay_identity(gen):
    # with zero gradients the whole update is the decoupled decay
    init = gen.standard_normal(8)
    params = {"w": Tensor(init.copy())}
    lr, wd = 0.05, 0.01
    state = adamw_init(params, weight_decay=wd)
    zero = np.zeros(8)
    expected = init.copy()
    for _ in range(5):
        adamw_step(params, {"w": zero}, state, lr)
        expected = expected - lr * wd * expected
        assert np.array_equal(params["w"].data, expected)
    assert np.all(state.m["w"] == 0.0)
    assert np.all(state.vmax["w"] == 0.0)


def test_zero_decay_zero_grad_is_noop(gen):
    init = gen.standard_normal(4)
    params = {"w": Tensor(init.copy())}
    state = adamw_init(params, weight_decay=0.0)
    adamw_step(params, {"w": np.zeros(4)}, state, lr=1.0)
    assert np.array_equal(params["w"].data, init)


def test_adamw_rejects_bad_inputs(gen):
    params = {"w": Tensor(np.ones(3))}
    state = adamw_init(params)
    with pytest.raises(ConfigError):
        adamw_step(params, {"x": np.ones(3)}, state, 1e-3)
    with pytest.raises(ConfigError):
        adamw_step(params, {"w": np.ones(3)}, state, -1e-3)
    with pytest.raises(NumericalError):
        adamw_step(params, {"w": np.array([1.0, np.nan, 0.0])}, state, 1e-3)
    # the aborted steps must not have mutated anything
    assert state.step == 0
    assert np.array_equal(params["w"].data, np.ones(3))


def test_decay_skips_via_adamw_init_argument(gen):
    a = {"w": Tensor(np.full(4, 2.0))}
    b = {"w": Tensor(np.full(4, 2.0))}
    g = gen.standard_normal(4)
    sa = adamw_init(a, weight_decay=0.0)
    sb = adamw_init(b, weight_decay=0.1)
    adamw_step(a, {"w": g.copy()}, sa, 1e-2)
    adamw_step(b, {"w": g.copy()}, sb, 1e-2)
    assert not np.array_equal(a["w"].data, b["w"].data)


# ---------------------------------------------------------------------------
# schedules


def test_onecycle_anchor_points():
    cfg = ScheduleConfig(kind="onecycle", total_steps=100, max_lr=1e-3,
                         pct_start=0.3, div_factor=25.0, final_div_factor=1e4)
    assert abs(onecycle_lr(0, cfg) - 1e-3 / 25.0) <= 1e-12
    assert abs(onecycle_lr(30, cfg) - 1e-3) <= 1e-12          # peak step
    assert abs(onecycle_lr(100, cfg) - 1e-3 / 1e4) <= 1e-12   # final step


def test_onecycle_shape():
    cfg = ScheduleConfig(kind="onecycle", total_steps=200, max_lr=3e-3)
    vals = [onecycle_lr(s, cfg) for s in range(201)]
    peak = int(0.3 * 200)
    assert all(b >= a for a, b in zip(vals[:peak], vals[1:peak + 1]))
    assert all(b <= a for a, b in zip(vals[peak:-1], vals[peak + 1:]))
    assert max(vals) == pytest.approx(3e-3)
    with pytest.raises(ConfigError):
        onecycle_lr(201, cfg)
    with pytest.raises(ConfigError):
        onecycle_lr(-1, cfg)


@pytest.mark.parametrize("t_mult", [1, 2])
def test_cawr_restart_boundaries(t_mult):
    t0 = 7
    cfg = ScheduleConfig(kind="cawr", total_steps=1000, max_lr=2e-3,
                         t0=t0, t_mult=t_mult, min_lr=1e-5)
    if t_mult == 1:
        boundaries = [0, t0, 2 * t0, 3 * t0, 10 * t0]
    else:
        boundaries = [0, t0, 3 * t0, 7 * t0, 15 * t0]   # cumulative 7,14,28,56
    for b in boundaries:
        assert cawr_lr(b, cfg) == 2e-3, b
    # strictly below the peak everywhere else in the first cycle
    for s in range(1, t0):
        assert cawr_lr(s, cfg) < 2e-3


def test_cawr_cosine_midpoint():
    cfg = ScheduleConfig(kind="cawr", total_steps=100, max_lr=1e-3,
                         t0=10, t_mult=1, min_lr=1e-4)
    mid = cawr_lr(5, cfg)
    assert abs(mid - (1e-3 + 1e-4) / 2.0) <= 1e-12
    # approaches min_lr at cycle end
    assert cawr_lr(9, cfg) < cawr_lr(8, cfg)
    assert cawr_lr(9, cfg) > 1e-4


def test_cawr_cycle_doubling_spacing():
    cfg = ScheduleConfig(kind="cawr", total_steps=10000, max_lr=1e-3,
                         t0=4, t_mult=2)
    # second cycle spans steps [4, 12); its midpoint sits at step 8
    assert abs(cawr_lr(8, cfg) - 5e-4) <= 1e-12


def test_schedule_dispatch_and_validation():
    one = ScheduleConfig(kind="onecycle", total_steps=10)
    assert schedule_lr(0, one) == onecycle_lr(0, one)
    caw = ScheduleConfig(kind="cawr", total_steps=10, t0=3)
    assert schedule_lr(2, caw) == cawr_lr(2, caw)
    with pytest.raises(ConfigError):
        ScheduleConfig(kind="linear").validate()
    with pytest.raises(ConfigError):
        ScheduleConfig(pct_start=1.5).validate()
    with pytest.raises(ConfigError):
        ScheduleConfig(div_factor=1.0).validate()
    with pytest.raises(ConfigError):
        ScheduleConfig(t_mult=3).validate()
    with pytest.raises(ConfigError):
        ScheduleConfig(max_lr=0.0).validate()
