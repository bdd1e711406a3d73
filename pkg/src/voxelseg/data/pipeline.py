"""Subject loading, preprocessing, augmentation, and dataset splitting.

The dataset directory layout is one directory per subject::

    <root>/<id>/<id>_t1.nii.gz      (plus t1ce, t2, flair)
    <root>/<id>/<id>_seg.nii.gz

Preprocessing: stack the four modalities, center-crop, z-score each modality
over its own cropped voxels, remap labels {0,1,2,4} -> {0,1,2,3}, one-hot.
Augmentation draws are keyed by (seed, subject index, epoch) so results do
not depend on loading order or parallelism.
"""

import math
import os
from dataclasses import dataclass

import numpy as np

from ..engine import Rng
from ..errors import DataError
from .nifti import NiftiVolume, load_nifti, save_nifti
from .phantom import MODALITIES, Subject

NUM_CLASSES = 4
STD_GUARD = 1e-6


@dataclass
class Sample:
    image: np.ndarray      # (4, D, H, W) float32
    target: np.ndarray     # (4, D, H, W) float32 one-hot

    def validate(self) -> "Sample":
        if self.image.ndim != 4 or self.image.shape[0] != 4:
            raise DataError(f"image must be (4, D, H, W), got {self.image.shape}")
        if self.target.shape != self.image.shape:
            raise DataError(f"target shape {self.target.shape} != image shape {self.image.shape}")
        tv = self.target
        if not np.all((tv == 0.0) | (tv == 1.0)) or not np.array_equal(
                tv.sum(axis=0), np.ones(tv.shape[1:], dtype=tv.dtype)):
            raise DataError("target is not a valid one-hot encoding")
        return self

    @property
    def labels(self) -> np.ndarray:
        return self.target.argmax(axis=0).astype(np.int64)


def remap_labels(mask: np.ndarray) -> np.ndarray:
    """Raw BraTS labels {0,1,2,4} -> contiguous {0,1,2,3}; already-remapped
    volumes (containing 3, no 4) pass through unchanged."""
    mask = np.asarray(mask)
    bad = ~np.isin(mask, (0, 1, 2, 3, 4))
    if bad.any():
        raise DataError(f"unexpected raw labels {sorted(np.unique(mask[bad]).tolist())}")
    out = mask.astype(np.int64)
    out[out == 4] = 3
    return out


def one_hot(labels: np.ndarray, num_classes: int = NUM_CLASSES) -> np.ndarray:
    out = np.zeros((num_classes,) + labels.shape, dtype=np.float32)
    for c in range(num_classes):
        out[c] = labels == c
    return out


def center_crop_start(extent: int, target: int) -> int:
    if extent < target:
        raise DataError(f"extent {extent} smaller than crop target {target}")
    return (extent - target) // 2


def zscore(channel: np.ndarray) -> np.ndarray:
    """Per-modality standardization in 64-bit with a degenerate-std guard."""
    x = channel.astype(np.float64)
    mu = x.mean()
    sd = max(x.std(), STD_GUARD)
    return ((x - mu) / sd).astype(np.float32)


def preprocess_subject(subject: Subject, crop_to=(128, 128, 128)) -> Sample:
    """Stack, center-crop (``crop_to=None`` keeps native extents), z-score,
    remap labels, one-hot."""
    image = np.stack([np.asarray(m, dtype=np.float32) for m in subject.modalities])
    mask = np.asarray(subject.mask)
    if crop_to is not None:
        starts = tuple(center_crop_start(e, t) for e, t in zip(mask.shape, crop_to))
        sl = tuple(slice(s, s + t) for s, t in zip(starts, crop_to))
        image = image[(slice(None),) + sl]
        mask = mask[sl]
    image = np.stack([zscore(image[c]) for c in range(image.shape[0])])
    labels = remap_labels(mask)
    return Sample(image=image, target=one_hot(labels)).validate()


def _rotate_image_hw(image: np.ndarray, theta_deg: float) -> np.ndarray:
    """Rotate (C, D, H, W) about the volume center in the H-W plane,
    bilinear per slice, zero fill outside."""
    c, d, h, w = image.shape
    th = math.radians(theta_deg)
    ch, cw = (h - 1) / 2.0, (w - 1) / 2.0
    hh, ww = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    # inverse map: source = R(-theta) . (dest - center) + center
    dy, dx = hh - ch, ww - cw
    sy = math.cos(th) * dy + math.sin(th) * dx + ch
    sx = -math.sin(th) * dy + math.cos(th) * dx + cw
    y0 = np.floor(sy).astype(np.int64)
    x0 = np.floor(sx).astype(np.int64)
    fy = (sy - y0).astype(image.dtype)
    fx = (sx - x0).astype(image.dtype)

    out = np.zeros_like(image)
    for oy, ox, wgt in (
        (0, 0, (1 - fy) * (1 - fx)),
        (0, 1, (1 - fy) * fx),
        (1, 0, fy * (1 - fx)),
        (1, 1, fy * fx),
    ):
        yy, xx = y0 + oy, x0 + ox
        ok = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
        yc, xc = np.clip(yy, 0, h - 1), np.clip(xx, 0, w - 1)
        out += image[:, :, yc, xc] * np.where(ok, wgt, 0).astype(image.dtype)
    return out


def _rotate_labels_hw(labels: np.ndarray, theta_deg: float) -> np.ndarray:
    """Nearest-neighbour rotation of a (D, H, W) label volume; background
    outside the source footprint."""
    d, h, w = labels.shape
    th = math.radians(theta_deg)
    ch, cw = (h - 1) / 2.0, (w - 1) / 2.0
    hh, ww = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    dy, dx = hh - ch, ww - cw
    sy = np.rint(math.cos(th) * dy + math.sin(th) * dx + ch).astype(np.int64)
    sx = np.rint(-math.sin(th) * dy + math.cos(th) * dx + cw).astype(np.int64)
    ok = (sy >= 0) & (sy < h) & (sx >= 0) & (sx < w)
    out = np.zeros_like(labels)
    out[:, ok] = labels[:, sy[ok], sx[ok]]
    return out


def augment(sample: Sample, rng: Rng, subject_index: int = 0, epoch: int = 0,
            p: float = 0.2) -> Sample:
    """Four independent coin flips in fixed order: flip(W) -> rotate(H-W,
    +-10 deg) -> intensity scale (0.9-1.1) -> Gaussian noise (sigma 0.01).

    Geometry applies to image and target (trilinear vs. nearest with one-hot
    re-projection); intensity transforms touch the image only.
    """
    gen = rng.generator("augment", subject_index, epoch)
    coins = gen.random(4) < p
    angle = gen.uniform(-10.0, 10.0)
    scale = gen.uniform(0.9, 1.1)

    image = sample.image
    target = sample.target
    if coins[0]:
        image = image[..., ::-1].copy()
        target = target[..., ::-1].copy()
    if coins[1]:
        image = _rotate_image_hw(image, angle)
        labels = _rotate_labels_hw(target.argmax(axis=0).astype(np.int64), angle)
        target = one_hot(labels)
    if coins[2]:
        image = (image * np.float32(scale)).astype(np.float32)
    if coins[3]:
        image = (image + gen.normal(0.0, 0.01, size=image.shape)).astype(np.float32)
    return Sample(image=image, target=target).validate()


def split_dataset(subject_ids, ratio: float, rng: Rng):
    """Seeded shuffle, first ceil(ratio * n) train, rest test."""
    ids = list(subject_ids)
    if not ids:
        raise DataError("cannot split an empty subject list")
    if not 0.0 < ratio <= 1.0:
        raise DataError(f"split ratio must be in (0, 1], got {ratio}")
    perm = rng.generator("split").permutation(len(ids))
    shuffled = [ids[i] for i in perm]
    n_train = math.ceil(ratio * len(ids))
    return shuffled[:n_train], shuffled[n_train:]


# ---------------------------------------------------------------------------
# Subject directory I/O


def subject_dir(root, sid: str) -> str:
    return os.path.join(root, sid)


def save_subject(subject: Subject, root) -> str:
    d = subject_dir(root, subject.id)
    os.makedirs(d, exist_ok=True)
    for name, vol in zip(MODALITIES, subject.modalities):
        save_nifti(NiftiVolume(np.asarray(vol, dtype=np.float32)),
                   os.path.join(d, f"{subject.id}_{name}.nii.gz"))
    save_nifti(NiftiVolume(np.asarray(subject.mask, dtype=np.uint8)),
               os.path.join(d, f"{subject.id}_seg.nii.gz"))
    return d


def _find_volume(d: str, stem: str) -> str:
    for ext in (".nii.gz", ".nii"):
        p = os.path.join(d, stem + ext)
        if os.path.exists(p):
            return p
    raise DataError(f"missing volume {stem}(.nii|.nii.gz) in {d}")


def load_subject(root, sid: str) -> Subject:
    d = subject_dir(root, sid)
    if not os.path.isdir(d):
        raise DataError(f"no subject directory {d}")
    modalities = [load_nifti(_find_volume(d, f"{sid}_{m}")).floats()
                  for m in MODALITIES]
    mask = load_nifti(_find_volume(d, f"{sid}_seg")).data.astype(np.int64)
    return Subject(id=sid, modalities=modalities, mask=mask)


def list_subjects(root) -> list:
    if not os.path.isdir(root):
        raise DataError(f"dataset root {root} is not a directory")
    out = []
    for name in sorted(os.listdir(root)):
        d = os.path.join(root, name)
        if os.path.isdir(d) and any(
                os.path.exists(os.path.join(d, f"{name}_seg{e}"))
                for e in (".nii.gz", ".nii")):
            out.append(name)
    if not out:
        raise DataError(f"no subjects found under {root}")
    return out
