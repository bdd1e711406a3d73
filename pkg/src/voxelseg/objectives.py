"""Training losses and evaluation metrics.

Losses operate on softmax probabilities ``(N, C, D, H, W)`` against one-hot
targets of the same shape and are composed from engine primitives, so they
are differentiable on the tape.  Metrics operate on hard integer label
volumes and are pure numpy.
"""

from dataclasses import dataclass, field

import numpy as np

from .engine import (
    Tensor,
    add,
    clamp,
    log,
    mul,
    neg,
    power,
    reduce_mean,
    reduce_sum,
    scale,
    shift,
)
from .errors import ShapeError

DICE_EPS = 1e-5
PROB_EPS = 1e-7

# Composed tumor regions over the per-voxel label map.
REGIONS = {"WT": frozenset({1, 2, 3}), "TC": frozenset({1, 3}), "ET": frozenset({3})}
NUM_CLASSES = 4


@dataclass(frozen=True)
class LossConfig:
    lambda_dice: float = 0.7
    lambda_focal: float = 0.3
    gamma: float = 2.0
    alpha: float = 0.25
    dice_eps: float = DICE_EPS
    prob_eps: float = PROB_EPS

    def validate(self) -> None:
        if abs(self.lambda_dice + self.lambda_focal - 1.0) > 1e-9:
            raise ShapeError("loss weights must sum to 1")
        if self.gamma < 0 or not (0.0 < self.alpha < 1.0) or self.dice_eps <= 0:
            raise ShapeError("invalid loss hyperparameters")


def _check_pair(probs: Tensor, target: Tensor) -> None:
    if probs.shape != target.shape:
        raise ShapeError(f"probs shape {probs.shape} != target shape {target.shape}")
    if probs.data.ndim != 5:
        raise ShapeError(f"expected (N, C, D, H, W), got {probs.shape}")
    td = target.data
    if not np.all((td == 0.0) | (td == 1.0)) or not np.allclose(td.sum(axis=1), 1.0):
        raise ShapeError("target must be a valid one-hot encoding")


def dice_loss(probs: Tensor, target: Tensor, eps: float = DICE_EPS) -> Tensor:
    """Soft Dice loss, one term per class, macro-averaged over all classes.

    Per class c: 1 - (2 * sum(p*t) + eps) / (sum(p) + sum(t) + eps), with the
    sums over batch and voxels.
    """
    _check_pair(probs, target)
    spatial = (0, 2, 3, 4)
    inter = reduce_sum(mul(probs, target), axes=spatial)        # (C,)
    psum = reduce_sum(probs, axes=spatial)
    tsum = reduce_sum(target, axes=spatial)
    ratio = mul(shift(scale(inter, 2.0), eps),
                power(shift(add(psum, tsum), eps), -1.0))
    return reduce_mean(neg(shift(ratio, -1.0)))  # mean_c of (1 - ratio_c)


def focal_loss(probs: Tensor, target: Tensor, gamma: float = 2.0,
               alpha: float = 0.25, prob_eps: float = PROB_EPS) -> Tensor:
    """Focal loss -alpha * (1 - p_t)^gamma * log(p_t), averaged over voxels.

    p_t is the probability assigned to the true class, clamped to
    [prob_eps, 1 - prob_eps] before the log.
    """
    _check_pair(probs, target)
    pt = clamp(reduce_sum(mul(probs, target), axes=(1,)), prob_eps, 1.0 - prob_eps)
    weight = power(neg(shift(pt, -1.0)), gamma)   # (1 - p_t)^gamma
    per_voxel = scale(mul(weight, log(pt)), -alpha)
    return reduce_mean(per_voxel)


def total_loss(probs: Tensor, target: Tensor, cfg: LossConfig = LossConfig()) -> Tensor:
    """lambda_dice * dice + lambda_focal * focal (defaults 0.7 / 0.3)."""
    cfg.validate()
    d = dice_loss(probs, target, cfg.dice_eps)
    f = focal_loss(probs, target, cfg.gamma, cfg.alpha, cfg.prob_eps)
    return add(scale(d, cfg.lambda_dice), scale(f, cfg.lambda_focal))


# ---------------------------------------------------------------------------
# Hard-label metrics


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def predict_labels(logits: np.ndarray) -> np.ndarray:
    """Per-voxel argmax over the class axis; ties go to the lowest class."""
    if logits.ndim == 5:
        return logits.argmax(axis=1).astype(np.int64)
    if logits.ndim == 4:
        return logits.argmax(axis=0).astype(np.int64)
    raise ShapeError(f"logits must be (N,C,D,H,W) or (C,D,H,W), got {logits.shape}")


def region_positive_set(region: str) -> frozenset:
    try:
        return REGIONS[region]
    except KeyError:
        raise ShapeError(f"unknown region {region!r}; expected one of {sorted(REGIONS)}")


def confusion_counts(pred: np.ndarray, truth: np.ndarray, positive) -> ConfusionCounts:
    """Binarize both volumes by membership in ``positive`` and count voxels."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ShapeError(f"prediction shape {pred.shape} != truth shape {truth.shape}")
    for vol, who in ((pred, "prediction"), (truth, "truth")):
        bad = ~np.isin(vol, range(NUM_CLASSES))
        if bad.any():
            raise ShapeError(f"{who} contains labels outside 0..{NUM_CLASSES - 1}: "
                             f"{sorted(np.unique(vol[bad]).tolist())}")
    pos = sorted(positive)
    p = np.isin(pred, pos)
    t = np.isin(truth, pos)
    tp = int(np.count_nonzero(p & t))
    fp = int(np.count_nonzero(p & ~t))
    fn = int(np.count_nonzero(~p & t))
    tn = int(np.count_nonzero(~p & ~t))
    return ConfusionCounts(tp=tp, fp=fp, tn=tn, fn=fn)


def metric_scores(c: ConfusionCounts) -> tuple:
    """(dice, sensitivity, specificity) with degenerate-count conventions.

    A class absent from both volumes scores 1.0, absent from exactly one
    scores 0.0; specificity mirrors the rule on the negative class.
    """
    if 2 * c.tp + c.fp + c.fn == 0:
        dice = 1.0
    else:
        dice = 2.0 * c.tp / (2.0 * c.tp + c.fp + c.fn)
    if c.tp + c.fn == 0:
        sens = 1.0 if c.fp == 0 else 0.0
    else:
        sens = c.tp / (c.tp + c.fn)
    if c.tn + c.fp == 0:
        spec = 1.0 if c.fn == 0 else 0.0
    else:
        spec = c.tn / (c.tn + c.fp)
    return dice, sens, spec


@dataclass
class MetricsReport:
    """Metrics per class (keys "0".."3") and per region ("WT","TC","ET")."""
    dice: dict = field(default_factory=dict)
    sensitivity: dict = field(default_factory=dict)
    specificity: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)

    KEYS = ("0", "1", "2", "3", "WT", "TC", "ET")


def evaluate_volume(pred: np.ndarray, truth: np.ndarray) -> MetricsReport:
    """Per-class and per-region dice / sensitivity / specificity."""
    rep = MetricsReport()
    sets = {str(c): frozenset({c}) for c in range(NUM_CLASSES)}
    sets.update(REGIONS)
    for key in MetricsReport.KEYS:
        cc = confusion_counts(pred, truth, sets[key])
        d, s, sp = metric_scores(cc)
        rep.counts[key] = cc
        rep.dice[key] = d
        rep.sensitivity[key] = s
        rep.specificity[key] = sp
    return rep


def average_reports(reports: list) -> MetricsReport:
    """Unweighted mean over subjects (macro over cases); counts are summed."""
    if not reports:
        raise ShapeError("cannot average zero reports")
    out = MetricsReport()
    n = len(reports)
    for key in MetricsReport.KEYS:
        out.dice[key] = sum(r.dice[key] for r in reports) / n
        out.sensitivity[key] = sum(r.sensitivity[key] for r in reports) / n
        out.specificity[key] = sum(r.specificity[key] for r in reports) / n
        out.counts[key] = ConfusionCounts(
            tp=sum(r.counts[key].tp for r in reports),
            fp=sum(r.counts[key].fp for r in reports),
            tn=sum(r.counts[key].tn for r in reports),
            fn=sum(r.counts[key].fn for r in reports),
        )
    return out
