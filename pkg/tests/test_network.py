"""Model assembly: parameter naming, counting, variants, forward contracts."""

import numpy as np
import pytest

from conftest import TINY
from voxelseg.engine import Rng, Tape, Tensor, reduce_mean, mul
from voxelseg.errors import ConfigError, EngineError, ShapeError
from voxelseg.network import (
    ArchitectureConfig, build_model, count_parameters, describe_model,
    forward, parameter_shapes, watch_all,
)

# every architecture named in the variant matrix
VARIANTS = {
    "baseline": ArchitectureConfig(
        in_channels=1, num_classes=2, stage_channels=(2, 4),
        convs_per_stage=(1, 1), decoders=1, attention="none"),
    "one_decoder_gated": ArchitectureConfig(
        in_channels=1, num_classes=2, stage_channels=(2, 4),
        convs_per_stage=(1, 1), decoders=1, attention="shared_per_level"),
    "dual_gated": TINY,
    "original_gating": ArchitectureConfig(
        in_channels=1, num_classes=2, stage_channels=(2, 4),
        convs_per_stage=(1, 1), decoders=2,
        attention="per_decoder_per_level", gating="original"),
    "strided_down": ArchitectureConfig(
        in_channels=1, num_classes=2, stage_channels=(2, 4),
        convs_per_stage=(1, 1), decoders=2,
        attention="per_decoder_per_level", downsample="strided_conv"),
}


def count_oracle(cfg):
    """Recount parameters from the architecture arithmetic alone."""
    ch, nc = cfg.stage_channels, cfg.convs_per_stage
    s = len(ch)
    total = 0

    def block(c_in, c_out, n):
        t = 0
        for i in range(n):
            ci = c_in if i == 0 else c_out
            t += c_out * ci * 27 + 3 * c_out
        return t

    for i in range(s):
        total += block(cfg.in_channels if i == 0 else ch[i - 1], ch[i], nc[i])
        if i > 0 and cfg.downsample == "strided_conv":
            total += ch[i - 1] * ch[i - 1] * 8 + ch[i - 1]
    n_dec = cfg.decoders
    for l in range(s - 1):
        src, dst = ch[s - 1 - l], ch[s - 2 - l]
        total += n_dec * (dst * src * 8 + dst)
        total += n_dec * block(2 * dst, dst, nc[s - 2 - l])
    total += n_dec * (cfg.num_classes * ch[0] + cfg.num_classes)
    families = {"none": 0, "shared_per_level": 1, "per_decoder_per_level": 2}[cfg.attention]
    for l in range(s - 1):
        c_x = ch[s - 2 - l]
        c_g = c_x if cfg.gating == "same_level" else ch[s - 1 - l]
        f = max(1, c_x // 2)
        total += families * (f * c_x + f + f * c_g + f + f + 1)
    if n_dec == 2:
        total += cfg.num_classes * 2 * cfg.num_classes + cfg.num_classes
    return total


def test_tiny_parameter_count_hand_value():
    # counted by hand from the tiny architecture: 902 scalars in 38 arrays
    shapes = parameter_shapes(TINY)
    assert len(shapes) == 38
    assert sum(int(np.prod(sh)) for sh in shapes.values()) == 902
    assert count_oracle(TINY) == 902


@pytest.mark.parametrize("name,cfg", VARIANTS.items())
def test_parameter_count_matches_oracle(name, cfg):
    shapes = parameter_shapes(cfg)
    assert sum(int(np.prod(sh)) for sh in shapes.values()) == count_oracle(cfg)


def test_default_architecture_count_matches_oracle():
    cfg = ArchitectureConfig()
    params = build_model(cfg, Rng(0))
    assert count_parameters(params) == count_oracle(cfg)


def test_tiny_name_set():
    names = set(parameter_shapes(TINY))
    want = set()
    for s in range(2):
        for part in ("w", "b", "gamma", "beta"):
            want.add(f"enc/s{s}/conv0/{part}")
    for d in ("A", "B"):
        want |= {f"dec{d}/l0/up/w", f"dec{d}/l0/up/b"}
        for part in ("w", "b", "gamma", "beta"):
            want.add(f"dec{d}/l0/conv0/{part}")
        want |= {f"head{d}/w", f"head{d}/b"}
        for short in ("wx/w", "wx/b", "wg/w", "wg/b", "psi/w", "psi/b"):
            want.add(f"gate{d}/l0/{short}")
    want |= {"fuse/w", "fuse/b"}
    assert names == want


def test_variant_name_set_rules():
    assert not any(n.startswith("gate") for n in parameter_shapes(VARIANTS["baseline"]))
    assert "fuse/w" not in parameter_shapes(VARIANTS["baseline"])
    one = parameter_shapes(VARIANTS["one_decoder_gated"])
    assert any(n.startswith("gateA/") for n in one)
    assert not any(n.startswith("gateB/") for n in one)
    assert not any(n.startswith("decB/") for n in one)
    strided = parameter_shapes(VARIANTS["strided_down"])
    assert "down/s1/w" in strided and "down/s1/b" in strided
    assert "down/s1/w" not in parameter_shapes(TINY)


def test_original_gating_widens_wg():
    shapes = parameter_shapes(VARIANTS["original_gating"])
    # gate at level 0: c_x = 2, gating signal from the deeper stage (4 channels)
    assert shapes["gateA/l0/wg/w"] == (1, 4, 1, 1, 1)
    assert parameter_shapes(TINY)["gateA/l0/wg/w"] == (1, 2, 1, 1, 1)


def test_config_validation():
    with pytest.raises(ConfigError):
        ArchitectureConfig(decoders=1, attention="per_decoder_per_level")
    with pytest.raises(ConfigError):
        ArchitectureConfig(attention="everywhere")
    with pytest.raises(ConfigError):
        ArchitectureConfig(stage_channels=(16,), convs_per_stage=(1,))
    with pytest.raises(ConfigError):
        ArchitectureConfig(stage_channels=(16, 32), convs_per_stage=(1, 1, 1))
    with pytest.raises(ConfigError):
        ArchitectureConfig(decoders=3)
    with pytest.raises(ConfigError):
        ArchitectureConfig(downsample="avgpool")


def test_build_deterministic_and_name_keyed():
    a = build_model(TINY, Rng(123))
    b = build_model(TINY, Rng(123))
    for n in a:
        assert np.array_equal(a[n].data, b[n].data), n
    c = build_model(TINY, Rng(124))
    assert not np.array_equal(a["enc/s0/conv0/w"].data, c["enc/s0/conv0/w"].data)
    # norm scales start at one, biases and shifts at zero
    assert np.all(a["enc/s0/conv0/gamma"].data == 1.0)
    assert np.all(a["enc/s0/conv0/beta"].data == 0.0)
    assert np.all(a["headA/b"].data == 0.0)


@pytest.mark.parametrize("name,cfg", VARIANTS.items())
def test_forward_shape_contract(name, cfg, gen):
    params = build_model(cfg, Rng(7))
    x = Tensor(gen.standard_normal((2, cfg.in_channels, 4, 4, 4)).astype(np.float32))
    art = forward(params, cfg, x, mode="eval")
    assert art.logits.shape == (2, cfg.num_classes, 4, 4, 4)
    assert np.all(np.isfinite(art.logits.data))
    assert set(art.heads) == ({"A"} if cfg.decoders == 1 else {"A", "B"})


def test_forward_input_checks(gen):
    params = build_model(TINY, Rng(0))
    with pytest.raises(ShapeError):
        forward(params, TINY, Tensor(np.zeros((1, 3, 4, 4, 4), dtype=np.float32)))
    with pytest.raises(ShapeError):
        forward(params, TINY, Tensor(np.zeros((1, 1, 5, 4, 4), dtype=np.float32)))
    with pytest.raises(ShapeError):
        forward(params, TINY, Tensor(np.zeros((1, 4, 4, 4), dtype=np.float32)))
    with pytest.raises(EngineError):
        forward(params, TINY, Tensor(np.zeros((1, 1, 4, 4, 4), dtype=np.float32)),
                mode="train", rng=Rng(0))  # no active tape
    with pytest.raises(ConfigError):
        forward(params, TINY, Tensor(np.zeros((1, 1, 4, 4, 4), dtype=np.float32)),
                mode="predict")


def test_capture_attention_maps(gen):
    params = build_model(TINY, Rng(3))
    x = Tensor(gen.standard_normal((1, 1, 4, 4, 4)).astype(np.float32))
    art = forward(params, TINY, x, mode="eval", capture_attention=True)
    assert set(art.alphas) == {"A", "B"}
    for d in ("A", "B"):
        assert len(art.alphas[d]) == 1  # one gated level in the tiny net
        a = art.alphas[d][0]
        assert a.shape == (1, 1, 4, 4, 4)
        assert np.all((a.data > 0) & (a.data < 1))
    # no capture requested -> empty
    art2 = forward(params, TINY, x, mode="eval")
    assert art2.alphas == {}


def test_gate_disjointness_across_decoders(gen):
    """With decoder B's head zeroed, B's gates cannot reach the fused logits."""
    params = build_model(TINY, Rng(5))
    params["headB/w"] = Tensor(np.zeros_like(params["headB/w"].data))
    params["headB/b"] = Tensor(np.zeros_like(params["headB/b"].data))
    x = Tensor(gen.standard_normal((1, 1, 4, 4, 4)).astype(np.float32))
    base = forward(params, TINY, x, mode="eval").logits.data.copy()
    for n in list(params):
        if n.startswith("gateB/"):
            params[n] = Tensor(params[n].data + 0.37)
    after = forward(params, TINY, x, mode="eval").logits.data
    assert np.abs(base - after).max() == 0.0
    # control: perturbing decoder A's gates must change the logits
    for n in list(params):
        if n.startswith("gateA/"):
            params[n] = Tensor(params[n].data + 0.37)
    control = forward(params, TINY, x, mode="eval").logits.data
    assert np.abs(base - control).max() > 0.0


def test_train_mode_dropout_changes_activations(gen):
    params = build_model(TINY, Rng(1))
    x = Tensor(gen.standard_normal((1, 1, 4, 4, 4)).astype(np.float32))
    ev = forward(params, TINY, x, mode="eval").logits.data
    rng = Rng(2)
    diffs = []
    for step in range(30):
        with Tape() as tape:
            watch_all(tape, params)
            tr = forward(params, TINY, tape.watch(Tensor(x.data.copy())),
                         mode="train", rng=rng, step=step).logits.data
        diffs.append(float(np.abs(tr - ev).max()))
    # dropout must actually fire on some step (masks are seeded, not flaky)
    assert max(diffs) > 0.0


def test_one_train_step_updates_all_parameters(gen):
    from voxelseg.optim import adamw_init, adamw_step

    params = build_model(TINY, Rng(9))
    before = {n: p.data.copy() for n, p in params.items()}
    x = Tensor(gen.standard_normal((1, 1, 4, 4, 4)).astype(np.float32))
    with Tape() as tape:
        watch_all(tape, params)
        art = forward(params, TINY, tape.watch(Tensor(x.data.copy())),
                      mode="train", rng=Rng(11), step=0)
        loss = reduce_mean(mul(art.logits, art.logits))
        node_grads = tape.backward(loss)
    grads = {n: node_grads[p.node] for n, p in params.items()}
    assert all(np.all(np.isfinite(g)) for g in grads.values())
    state = adamw_init(params)
    adamw_step(params, grads, state, lr=1e-2)
    changed = [n for n in params if not np.array_equal(before[n], params[n].data)]
    # weight decay moves every nonzero parameter even where the grad is zero
    assert len(changed) > len(params) // 2


def test_describe_model_mentions_count_and_names():
    text = describe_model(TINY)
    assert "total parameters: 902" in text
    assert "enc/s0/conv0/w" in text
    assert "fuse/w" in text
    assert "per_decoder_per_level" in text
