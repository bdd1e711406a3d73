"""Run-config plumbing: parsing, coercion, precedence, extractors,
serialize/parse round trip, and validation errors.
"""

import numpy as np
import pytest

from voxelseg.config import (RunConfig, apply_overrides, config_from_text,
                             parse_config_text, resolve_config,
                             serialize_config)
from voxelseg.errors import ConfigError


def test_defaults_are_a_valid_runnable_config():
    cfg = RunConfig().validate()
    arch = cfg.architecture()
    assert arch.stage_channels == (16, 32, 64, 128, 256)
    assert cfg.loss().lambda_dice == pytest.approx(0.7)
    assert cfg.crop_to() is None


def test_parse_comments_blank_lines_and_inline_comments():
    text = """
# full-line comment
epochs = 3

max_lr = 0.01   # inline comment
stage_channels = 8, 16   # tuple with spaces
"""
    vals = parse_config_text(text)
    assert vals == {"epochs": 3, "max_lr": 0.01, "stage_channels": (8, 16)}


def test_unknown_key_names_source_and_line():
    with pytest.raises(ConfigError, match=r"run\.cfg:3: unknown config key 'learning_rate'"):
        parse_config_text("epochs = 1\n\nlearning_rate = 0.1\n", source="run.cfg")


def test_malformed_line_rejected():
    with pytest.raises(ConfigError, match=r"<config>:1: expected 'key = value'"):
        parse_config_text("epochs 3\n")


def test_tuple_coercion_accepts_commas_and_spaces():
    assert parse_config_text("stage_channels = 4,8,16\n")["stage_channels"] == (4, 8, 16)
    assert parse_config_text("convs_per_stage = 1 1 2\n")["convs_per_stage"] == (1, 1, 2)


def test_scientific_notation_floats():
    assert parse_config_text("weight_decay = 1e-5\n")["weight_decay"] == pytest.approx(1e-5)


def test_bad_literal_names_key():
    with pytest.raises(ConfigError, match="cannot parse epochs"):
        parse_config_text("epochs = three\n")


def test_precedence_file_env_then_set(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("epochs = 5\nmax_lr = 0.001\nseed = 7\n")
    cfg = resolve_config(
        path=path,
        overrides=["max_lr=0.03"],
        environ={"VOXELSEG_MAX_LR": "0.02", "VOXELSEG_EPOCHS": "9"},
    )
    assert cfg.seed == 7          # file only
    assert cfg.epochs == 9        # env beats file
    assert cfg.max_lr == pytest.approx(0.03)  # --set beats env
    # unrelated environment variables must not leak in
    cfg2 = resolve_config(environ={"PATH": "/bin", "VOXELSEG": "nope"})
    assert cfg2.epochs == RunConfig.epochs


def test_resolve_without_file_uses_defaults():
    cfg = resolve_config(environ={})
    assert cfg == RunConfig()


def test_resolve_missing_file_is_config_error(tmp_path):
    with pytest.raises(ConfigError, match="cannot read config"):
        resolve_config(path=tmp_path / "absent.cfg", environ={})


def test_apply_overrides_in_order_last_wins():
    vals = apply_overrides({}, ["epochs=2", "epochs=4"])
    assert vals == {"epochs": 4}


def test_apply_overrides_rejects_bad_items():
    with pytest.raises(ConfigError, match="expects key=value"):
        apply_overrides({}, ["epochs"])
    with pytest.raises(ConfigError, match="unknown config key"):
        apply_overrides({}, ["nope=1"])


def test_crop_to_zero_means_native_extents():
    assert RunConfig(crop_size=0).crop_to() is None
    assert RunConfig(crop_size=96).crop_to() == (96, 96, 96)


def test_schedule_extractor_converts_epochs_to_steps():
    cfg = RunConfig(epochs=4, lr_schedule="cawr", cawr_t0_epochs=3, cawr_t_mult=2,
                    max_lr=0.01, min_lr=0.001)
    sch = cfg.schedule(steps_per_epoch=25)
    assert sch.kind == "cawr"
    assert sch.total_steps == 4 * 25
    assert sch.t0 == 3 * 25
    assert sch.t_mult == 2
    assert sch.max_lr == pytest.approx(0.01)
    assert sch.min_lr == pytest.approx(0.001)


def test_schedule_extractor_guards_degenerate_runs():
    sch = RunConfig(epochs=0).schedule(steps_per_epoch=10)
    assert sch.total_steps == 1
    assert RunConfig(cawr_t0_epochs=1).schedule(steps_per_epoch=0).t0 == 1


def test_serialize_parse_round_trip():
    cfg = RunConfig(stage_channels=(4, 8), convs_per_stage=(1, 1), epochs=2,
                    attention="shared_per_level", max_lr=3e-3, data_dir="/tmp/x",
                    crop_size=16)
    text = serialize_config(cfg)
    assert config_from_text(text) == cfg
    # every field appears exactly once
    keys = [line.split(" = ")[0] for line in text.strip().splitlines()]
    assert len(keys) == len(set(keys))
    assert "stage_channels = 4,8" in text


@pytest.mark.parametrize("kwargs,fragment", [
    (dict(lr_schedule="cosine"), "lr_schedule"),
    (dict(epochs=-1), "epochs"),
    (dict(batch_size=0), "batch_size"),
    (dict(split_ratio=0.0), "split_ratio"),
    (dict(augment_p=1.5), "augment_p"),
    (dict(weight_decay=-1e-4), "weight_decay"),
    (dict(max_lr=0.0), "max_lr"),
])
def test_validate_rejects(kwargs, fragment):
    with pytest.raises(ConfigError, match=fragment):
        RunConfig(**kwargs).validate()


def test_validate_delegates_architecture_checks():
    with pytest.raises(ConfigError):
        RunConfig(attention="super_attention").validate()
    with pytest.raises(ConfigError):
        RunConfig(decoders=1, attention="per_decoder_per_level").validate()
