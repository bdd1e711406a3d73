"""Volume I/O, synthetic phantoms, and the preprocessing pipeline."""

from .nifti import NiftiVolume, load_nifti, save_nifti
from .phantom import MODALITIES, Subject, generate_phantom
from .pipeline import (
    NUM_CLASSES,
    Sample,
    augment,
    center_crop_start,
    list_subjects,
    load_subject,
    one_hot,
    preprocess_subject,
    remap_labels,
    save_subject,
    split_dataset,
    zscore,
)

__all__ = [
    "NiftiVolume", "load_nifti", "save_nifti",
    "MODALITIES", "Subject", "generate_phantom",
    "NUM_CLASSES", "Sample", "augment", "center_crop_start",
    "list_subjects", "load_subject", "one_hot", "preprocess_subject",
    "remap_labels", "save_subject", "split_dataset", "zscore",
]
