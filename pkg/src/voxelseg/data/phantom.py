"""Synthetic subjects for desk-scale training and tests.

Each phantom is a random axis-aligned ellipsoidal "tumor" with three nested
shells on background 0: label 3 innermost (enhancing-core analog), label 1
(necrotic analog), label 2 outermost (edema analog).  Four modality channels
get distinct per-label base intensities plus a smooth spatial bias field and
Gaussian noise, calibrated so the labels stay recoverable from intensities.
Generation is a pure function of (seed, index).
"""

from dataclasses import dataclass

import numpy as np

from ..engine import Rng
from ..errors import DataError

MODALITIES = ("t1", "t1ce", "t2", "flair")

# Normalized ellipsoid radii bounding each shell: rho <= .45 -> 3,
# .45 < rho <= .75 -> 1, .75 < rho <= 1 -> 2.
_SHELL_RHO = (0.45, 0.75, 1.0)

# Base intensity per (modality, label 0..3); spaced so that even after bias
# (+-0.15) and noise (sigma 0.05) a nearest-base decoder recovers the label.
_BASE = np.array([
    [0.20, 0.80, 1.40, 2.00],
    [0.30, 1.00, 1.70, 2.40],
    [0.25, 0.90, 1.55, 2.20],
    [0.15, 0.75, 1.35, 1.95],
], dtype=np.float64)


@dataclass
class Subject:
    id: str
    modalities: list        # four (D, H, W) float32 arrays, order MODALITIES
    mask: np.ndarray        # (D, H, W) integer labels

    def __post_init__(self):
        if len(self.modalities) != 4:
            raise DataError(f"subject {self.id}: expected 4 modalities, got {len(self.modalities)}")
        shapes = {m.shape for m in self.modalities} | {self.mask.shape}
        if len(shapes) != 1:
            raise DataError(f"subject {self.id}: inconsistent volume shapes {shapes}")

    @property
    def shape(self):
        return self.mask.shape


def _ellipsoid_mask(size: int, gen: np.random.Generator) -> np.ndarray:
    """Label volume with all four labels present, or None for a failed draw."""
    margin = size * 0.18
    center = gen.uniform(margin + size * 0.12, size - 1 - margin - size * 0.12, size=3) \
        if size > 24 else gen.uniform(size * 0.35, size * 0.65, size=3)
    semi = gen.uniform(size * 0.18, size * 0.30, size=3)
    grid = np.indices((size, size, size)).astype(np.float64)
    rho = np.sqrt(sum(((grid[i] - center[i]) / semi[i]) ** 2 for i in range(3)))
    labels = np.zeros((size, size, size), dtype=np.uint8)
    labels[rho <= _SHELL_RHO[2]] = 2
    labels[rho <= _SHELL_RHO[1]] = 1
    labels[rho <= _SHELL_RHO[0]] = 3
    if set(np.unique(labels)) == {0, 1, 2, 3}:
        return labels
    return None


def generate_phantom(seed: int, size: int, count: int) -> list:
    """``count`` deterministic subjects of spatial shape (size, size, size)."""
    if size < 16:
        raise DataError(f"phantom size must be >= 16, got {size}")
    if count < 1:
        raise DataError(f"phantom count must be >= 1, got {count}")
    rng = Rng(seed)
    subjects = []
    for index in range(count):
        gen = rng.generator("phantom", index)
        labels = None
        for _ in range(64):  # geometric draws rarely miss a shell; retry if so
            labels = _ellipsoid_mask(size, gen)
            if labels is not None:
                break
        if labels is None:
            raise DataError(f"phantom {index}: could not realize all four labels at size {size}")

        coords = np.indices((size, size, size)).astype(np.float64) / max(size - 1, 1)
        modalities = []
        for m in range(4):
            base = _BASE[m][labels]
            slope = gen.uniform(-0.1, 0.1, size=3)
            bias = sum(slope[i] * (coords[i] - 0.5) for i in range(3))
            bias = bias + 0.05 * np.cos(2.0 * np.pi * coords[(m + 1) % 3])
            noise = gen.normal(0.0, 0.05, size=labels.shape)
            modalities.append((base + bias + noise).astype(np.float32))
        subjects.append(Subject(id=f"phantom_{index:03d}", modalities=modalities,
                                mask=labels))
    return subjects
