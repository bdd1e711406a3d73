"""Flat run configuration: defaults, file parsing, env and CLI overrides.

Format is plain UTF-8 ``key = value`` lines with ``#`` comments.  Every key
has a default, so an empty config is runnable.  Precedence, lowest to
highest: built-in defaults, config file, ``VOXELSEG_<KEY>`` environment
variables, ``--set key=value`` flags.  Unknown keys are hard errors; silent
typos in experiment configs are how results get mislabeled.
"""

import dataclasses
import os
from dataclasses import dataclass

from .errors import ConfigError
from .network import ArchitectureConfig
from .objectives import LossConfig
from .optim import ScheduleConfig

ENV_PREFIX = "VOXELSEG_"


@dataclass
class RunConfig:
    # architecture
    in_channels: int = 4
    num_classes: int = 4
    stage_channels: tuple = (16, 32, 64, 128, 256)
    convs_per_stage: tuple = (2, 2, 3, 3, 4)
    decoders: int = 2
    attention: str = "per_decoder_per_level"
    gating: str = "same_level"
    downsample: str = "maxpool"
    # loss
    lambda_dice: float = 0.7
    lambda_focal: float = 0.3
    focal_gamma: float = 2.0
    focal_alpha: float = 0.25
    # optimizer + schedule
    lr_schedule: str = "onecycle"
    max_lr: float = 1e-3
    pct_start: float = 0.3
    div_factor: float = 25.0
    final_div_factor: float = 1e4
    cawr_t0_epochs: int = 10
    cawr_t_mult: int = 2
    min_lr: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 1e-4
    # data: data_dir empty -> generate phantoms in-process; crop_size 0 -> native extents
    data_dir: str = ""
    phantom_size: int = 32
    phantom_count: int = 8
    crop_size: int = 0
    split_ratio: float = 0.75
    augment_p: float = 0.2
    seed: int = 1234
    # run
    epochs: int = 50
    batch_size: int = 1
    out_dir: str = "run"
    eval_every: int = 1

    def validate(self) -> "RunConfig":
        self.architecture()          # delegates structural checks
        self.loss()
        if self.lr_schedule not in ("onecycle", "cawr"):
            raise ConfigError(f"lr_schedule must be onecycle or cawr, got {self.lr_schedule!r}")
        for key in ("epochs", "crop_size", "min_lr"):
            if getattr(self, key) < 0:
                raise ConfigError(f"{key} must be >= 0, got {getattr(self, key)}")
        for key in ("batch_size", "eval_every", "phantom_count", "phantom_size",
                    "cawr_t0_epochs", "cawr_t_mult", "max_lr", "weight_decay"):
            if getattr(self, key) <= 0 and key != "weight_decay":
                raise ConfigError(f"{key} must be positive, got {getattr(self, key)}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if not 0.0 < self.split_ratio <= 1.0:
            raise ConfigError(f"split_ratio must be in (0, 1], got {self.split_ratio}")
        if not 0.0 <= self.augment_p <= 1.0:
            raise ConfigError(f"augment_p must be in [0, 1], got {self.augment_p}")
        return self

    # -- extractors for the module-level configs -------------------------

    def architecture(self) -> ArchitectureConfig:
        return ArchitectureConfig(
            in_channels=self.in_channels, num_classes=self.num_classes,
            stage_channels=self.stage_channels, convs_per_stage=self.convs_per_stage,
            decoders=self.decoders, attention=self.attention,
            gating=self.gating, downsample=self.downsample)

    def loss(self) -> LossConfig:
        return LossConfig(lambda_dice=self.lambda_dice, lambda_focal=self.lambda_focal,
                          gamma=self.focal_gamma, alpha=self.focal_alpha)

    def schedule(self, steps_per_epoch: int) -> ScheduleConfig:
        """CAWR cycle lengths are configured in epochs and converted to steps
        here; OneCycle spans the whole run."""
        total = max(1, self.epochs * steps_per_epoch)
        return ScheduleConfig(
            kind=self.lr_schedule, total_steps=total, max_lr=self.max_lr,
            pct_start=self.pct_start, div_factor=self.div_factor,
            final_div_factor=self.final_div_factor,
            t0=max(1, self.cawr_t0_epochs * steps_per_epoch),
            t_mult=self.cawr_t_mult, min_lr=self.min_lr)

    def crop_to(self):
        return None if self.crop_size == 0 else (self.crop_size,) * 3


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _coerce(key: str, text: str):
    """Parse a raw string to the field's declared type."""
    default = getattr(RunConfig, key)
    text = text.strip()
    try:
        if isinstance(default, tuple):
            parts = [p for p in text.replace(",", " ").split() if p]
            return tuple(int(p) for p in parts)
        if isinstance(default, bool):
            return text.lower() in ("1", "true", "yes")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        return text
    except ValueError as e:
        raise ConfigError(f"cannot parse {key} = {text!r}: {e}") from None


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Flat `key = value` lines; `#` starts a comment; blank lines ignored."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.rstrip()!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in _FIELDS:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
        out[key] = _coerce(key, value)
    return out


def resolve_config(path=None, overrides=None, environ=None) -> RunConfig:
    """Layer defaults, file, VOXELSEG_* environment, then --set pairs."""
    values = {}
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                text = fh.read()
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from None
        values.update(parse_config_text(text, source=str(path)))
    env = os.environ if environ is None else environ
    for key in _FIELDS:
        var = ENV_PREFIX + key.upper()
        if var in env:
            values[key] = _coerce(key, env[var])
    apply_overrides(values, overrides)
    return RunConfig(**values).validate()


def apply_overrides(values: dict, overrides) -> dict:
    """Apply --set key=value pairs in order; unknown keys are errors."""
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, _, value = item.partition("=")
        key = key.strip()
        if key not in _FIELDS:
            raise ConfigError(f"--set: unknown config key {key!r}")
        values[key] = _coerce(key, value)
    return values


def serialize_config(cfg: RunConfig) -> str:
    """Render the fully resolved config; parse(serialize(c)) == c."""
    lines = []
    for f in dataclasses.fields(RunConfig):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"


def config_from_text(text: str) -> RunConfig:
    return RunConfig(**parse_config_text(text)).validate()
