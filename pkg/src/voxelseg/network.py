"""Encoder / decoder model assembly.

A configurable volumetric segmentation network: a conv encoder with
downsampling between stages, one or two decoder paths with transposed-conv
upsampling and (optionally attention-gated) skip connections, per-decoder
1x1x1 class heads, and -- with two decoders -- a 1x1x1 fusion convolution over
the concatenated head outputs.

Parameters live in a flat ``{name: Tensor}`` dict whose name set is a pure
function of the config, e.g.::

    enc/s0/conv0/w        encoder stage 0, first conv weight
    down/s2/w             strided-conv downsample into stage 2 (that variant)
    decA/l1/up/w          decoder A, level 1 transposed conv
    decA/l1/conv0/gamma   decoder A, level 1 block norm scale
    gateB/l0/psi/b        decoder B's attention gate at level 0
    headA/w  fuse/b       class head and fusion

Initialization is keyed by parameter name (see layers.init_conv_weight), so
two builds from the same seed are bit-identical regardless of construction
order.
"""

from dataclasses import dataclass, field

import numpy as np

from . import attention as att
from . import layers as ly
from .engine import Tensor, Rng, active_tape, concat
from .errors import ConfigError, EngineError, ShapeError

ATTENTION_MODES = ("none", "shared_per_level", "per_decoder_per_level")
GATING_MODES = ("same_level", "original")
DOWNSAMPLE_MODES = ("maxpool", "strided_conv")


@dataclass(frozen=True)
class ArchitectureConfig:
    in_channels: int = 4
    num_classes: int = 4
    stage_channels: tuple = (16, 32, 64, 128, 256)
    convs_per_stage: tuple = (2, 2, 3, 3, 4)
    decoders: int = 2
    attention: str = "per_decoder_per_level"
    gating: str = "same_level"
    downsample: str = "maxpool"

    def __post_init__(self):
        object.__setattr__(self, "stage_channels", tuple(int(c) for c in self.stage_channels))
        object.__setattr__(self, "convs_per_stage", tuple(int(c) for c in self.convs_per_stage))
        self.validate()

    def validate(self) -> None:
        if self.in_channels < 1:
            raise ConfigError(f"in_channels must be >= 1, got {self.in_channels}")
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if len(self.stage_channels) != len(self.convs_per_stage):
            raise ConfigError(
                f"stage_channels ({len(self.stage_channels)}) and convs_per_stage "
                f"({len(self.convs_per_stage)}) must have equal length")
        if len(self.stage_channels) < 2:
            raise ConfigError("need at least 2 stages")
        if any(c < 1 for c in self.stage_channels):
            raise ConfigError(f"stage channels must be >= 1, got {self.stage_channels}")
        if any(k < 1 for k in self.convs_per_stage):
            raise ConfigError(f"convs per stage must be >= 1, got {self.convs_per_stage}")
        if self.decoders not in (1, 2):
            raise ConfigError(f"decoders must be 1 or 2, got {self.decoders}")
        if self.attention not in ATTENTION_MODES:
            raise ConfigError(f"attention must be one of {ATTENTION_MODES}, got {self.attention!r}")
        if self.gating not in GATING_MODES:
            raise ConfigError(f"gating must be one of {GATING_MODES}, got {self.gating!r}")
        if self.downsample not in DOWNSAMPLE_MODES:
            raise ConfigError(f"downsample must be one of {DOWNSAMPLE_MODES}, got {self.downsample!r}")
        if self.attention == "per_decoder_per_level" and self.decoders != 2:
            raise ConfigError("per_decoder_per_level attention requires decoders = 2")

    @property
    def num_stages(self) -> int:
        return len(self.stage_channels)

    @property
    def divisor(self) -> int:
        """Required divisor of every input spatial extent."""
        return 2 ** (self.num_stages - 1)

    def dropout_rate(self, channels: int) -> float:
        if channels <= 32:
            return 0.1
        if channels <= 128:
            return 0.2
        return 0.3

    def decoder_names(self) -> tuple:
        return ("A",) if self.decoders == 1 else ("A", "B")

    def gate_families(self) -> tuple:
        """Gate name prefixes actually built: () / ("A",) shared / ("A","B")."""
        if self.attention == "none":
            return ()
        if self.attention == "shared_per_level":
            return ("A",)
        return ("A", "B")

    def gate_family_for(self, decoder: str) -> str:
        return "A" if self.attention == "shared_per_level" else decoder


@dataclass
class ForwardArtifacts:
    logits: Tensor
    heads: dict = field(default_factory=dict)
    alphas: dict = field(default_factory=dict)


def parameter_shapes(cfg: ArchitectureConfig) -> dict:
    """Ordered name -> shape map; the single source of the model's name set."""
    shapes: dict = {}
    chans = cfg.stage_channels
    stages = cfg.num_stages

    def conv_block(prefix, c_in, c_out, n_convs):
        for i in range(n_convs):
            ci = c_in if i == 0 else c_out
            shapes[f"{prefix}/conv{i}/w"] = (c_out, ci, 3, 3, 3)
            shapes[f"{prefix}/conv{i}/b"] = (c_out,)
            shapes[f"{prefix}/conv{i}/gamma"] = (c_out,)
            shapes[f"{prefix}/conv{i}/beta"] = (c_out,)

    for s in range(stages):
        if s > 0 and cfg.downsample == "strided_conv":
            shapes[f"down/s{s}/w"] = (chans[s - 1], chans[s - 1], 2, 2, 2)
            shapes[f"down/s{s}/b"] = (chans[s - 1],)
        c_in = cfg.in_channels if s == 0 else chans[s - 1]
        conv_block(f"enc/s{s}", c_in, chans[s], cfg.convs_per_stage[s])

    levels = stages - 1
    for d in cfg.decoder_names():
        for l in range(levels):
            src = chans[stages - 1 - l]
            dst = chans[stages - 2 - l]
            shapes[f"dec{d}/l{l}/up/w"] = (dst, src, 2, 2, 2)
            shapes[f"dec{d}/l{l}/up/b"] = (dst,)
            conv_block(f"dec{d}/l{l}", 2 * dst, dst, cfg.convs_per_stage[stages - 2 - l])
        shapes[f"head{d}/w"] = (cfg.num_classes, chans[0], 1, 1, 1)
        shapes[f"head{d}/b"] = (cfg.num_classes,)

    for f in cfg.gate_families():
        for l in range(levels):
            c_x = chans[stages - 2 - l]                     # skip channels
            c_g = c_x if cfg.gating == "same_level" else chans[stages - 1 - l]
            for short, shape in att.gate_param_shapes(c_x, c_g).items():
                shapes[f"gate{f}/l{l}/{short}"] = shape

    if cfg.decoders == 2:
        shapes["fuse/w"] = (cfg.num_classes, 2 * cfg.num_classes, 1, 1, 1)
        shapes["fuse/b"] = (cfg.num_classes,)
    return shapes


def build_model(cfg: ArchitectureConfig, rng: Rng, dtype=np.float32) -> dict:
    """Initialize every parameter: conv weights fan-in normal keyed by name,
    biases and norm shifts zero, norm scales one."""
    params = {}
    for name, shape in parameter_shapes(cfg).items():
        if name.endswith("/w"):
            c_in, k = shape[1], shape[2]
            arr = rng.generator("init", name).normal(
                0.0, ly.conv_init_std(c_in, k), size=shape).astype(dtype)
        elif name.endswith("/gamma"):
            arr = np.ones(shape, dtype=dtype)
        else:  # /b and /beta
            arr = np.zeros(shape, dtype=dtype)
        params[name] = Tensor(arr)
    return params


def count_parameters(params: dict) -> int:
    return sum(int(np.prod(t.shape)) for t in params.values())


def watch_all(tape, params: dict) -> None:
    for t in params.values():
        tape.watch(t)


class _Dropout:
    """Sequential dropout-site counter; site index keys the mask stream."""

    def __init__(self, mode, rng, step):
        self.active = mode == "train"
        self.rng = rng
        self.step = step
        self.site = 0

    def __call__(self, cfg: ArchitectureConfig, h: Tensor) -> Tensor:
        site = self.site
        self.site += 1
        if not self.active:
            return h
        n, c = h.shape[0], h.shape[1]
        p = cfg.dropout_rate(c)
        mask = ly.dropout_channel_mask(self.rng, n, c, p, self.step, site,
                                       dtype=h.data.dtype)
        return ly.channel_dropout(h, mask)


def _conv_block(params, prefix, h, n_convs):
    for i in range(n_convs):
        w = params[f"{prefix}/conv{i}/w"]
        b = params[f"{prefix}/conv{i}/b"]
        h = ly.conv3d(h, w, b, stride=1, pad=1)
        gamma = params[f"{prefix}/conv{i}/gamma"]
        beta = params[f"{prefix}/conv{i}/beta"]
        h = ly.group_norm(h, gamma, beta, ly.default_groups(h.shape[1]))
        h = ly.relu(h)
    return h


def forward(params: dict, cfg: ArchitectureConfig, x: Tensor, mode: str = "eval",
            rng: Rng = None, step: int = 0,
            capture_attention: bool = False) -> ForwardArtifacts:
    """Run the network; ``mode`` is ``train`` (dropout active, tape required)
    or ``eval`` (deterministic identity dropout)."""
    if mode not in ("train", "eval"):
        raise ConfigError(f"mode must be 'train' or 'eval', got {mode!r}")
    if mode == "train":
        if active_tape() is None:
            raise EngineError("train-mode forward requires an active tape")
        if rng is None:
            raise EngineError("train-mode forward requires an rng for dropout masks")
    if x.data.ndim != 5:
        raise ShapeError(f"input must be (N, C, D, H, W), got shape {x.shape}")
    if x.shape[1] != cfg.in_channels:
        raise ShapeError(f"input has {x.shape[1]} channels, config expects {cfg.in_channels}")
    div = cfg.divisor
    for e in x.shape[2:]:
        if e % div != 0:
            raise ShapeError(
                f"spatial extents {x.shape[2:]} must be divisible by {div} "
                f"for {cfg.num_stages} stages")

    stages = cfg.num_stages
    drop = _Dropout(mode, rng, step)

    skips = []
    h = x
    for s in range(stages):
        if s > 0:
            if cfg.downsample == "maxpool":
                h = ly.maxpool3d(h)
            else:
                h = ly.conv3d(h, params[f"down/s{s}/w"], params[f"down/s{s}/b"],
                              stride=2, pad=0)
        h = _conv_block(params, f"enc/s{s}", h, cfg.convs_per_stage[s])
        h = drop(cfg, h)
        if s < stages - 1:
            skips.append(h)
    bottleneck = h

    heads = {}
    alphas = {}
    for d in cfg.decoder_names():
        h = bottleneck
        maps = []
        for l in range(stages - 1):
            skip = skips[stages - 2 - l]
            up = ly.transposed_conv3d(h, params[f"dec{d}/l{l}/up/w"],
                                      params[f"dec{d}/l{l}/up/b"])
            if cfg.attention == "none":
                gated = skip
            else:
                f = cfg.gate_family_for(d)
                gp = [params[f"gate{f}/l{l}/{s}"] for s in
                      ("wx/w", "wx/b", "wg/w", "wg/b", "psi/w", "psi/b")]
                if cfg.gating == "same_level":
                    gated, alpha = att.attention_gate_same_level(skip, up, *gp)
                else:
                    gated, alpha = att.attention_gate_original(skip, h, *gp)
                if capture_attention:
                    maps.append(alpha)
            h = concat(1, [gated, up])
            h = _conv_block(params, f"dec{d}/l{l}", h, cfg.convs_per_stage[stages - 2 - l])
            h = drop(cfg, h)
        heads[d] = ly.conv3d(h, params[f"head{d}/w"], params[f"head{d}/b"],
                             stride=1, pad=0)
        if capture_attention and cfg.attention != "none":
            alphas[d] = maps

    if cfg.decoders == 1:
        logits = heads["A"]
    else:
        merged = concat(1, [heads["A"], heads["B"]])
        logits = ly.conv3d(merged, params["fuse/w"], params["fuse/b"], stride=1, pad=0)
    return ForwardArtifacts(logits=logits, heads=heads, alphas=alphas)


def describe_model(cfg: ArchitectureConfig) -> str:
    """Plain-text architecture dump: stages, blocks, dropout rates, parameter
    shapes and the total count."""
    shapes = parameter_shapes(cfg)
    total = sum(int(np.prod(s)) for s in shapes.values())
    lines = [
        "architecture:",
        f"  in_channels       {cfg.in_channels}",
        f"  num_classes       {cfg.num_classes}",
        f"  stage_channels    {list(cfg.stage_channels)}",
        f"  convs_per_stage   {list(cfg.convs_per_stage)}",
        f"  decoders          {cfg.decoders}",
        f"  attention         {cfg.attention}",
        f"  gating            {cfg.gating}",
        f"  downsample        {cfg.downsample}",
        f"  input divisor     {cfg.divisor}",
        "",
        "dropout (after each conv block, by output channels):",
    ]
    for s, c in enumerate(cfg.stage_channels):
        lines.append(f"  enc/s{s}  channels {c:>4}  p={cfg.dropout_rate(c)}")
    for d in cfg.decoder_names():
        for l in range(cfg.num_stages - 1):
            c = cfg.stage_channels[cfg.num_stages - 2 - l]
            lines.append(f"  dec{d}/l{l} channels {c:>4}  p={cfg.dropout_rate(c)}")
    lines.append("")
    lines.append("parameters:")
    for name, shape in shapes.items():
        lines.append(f"  {name:<28} {str(tuple(shape)):<22} {int(np.prod(shape))}")
    lines.append(f"total parameters: {total}")
    return "\n".join(lines)
