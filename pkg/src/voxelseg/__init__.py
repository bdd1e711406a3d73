"""voxelseg: a self-contained differentiable 3D segmentation stack.

Pure numpy + numba, no deep-learning framework.  Subpackages:

- :mod:`voxelseg.engine`    tensors, tape-based reverse-mode autodiff, RNG
- :mod:`voxelseg.kernels`   conv / pooling kernels (numba or numpy backend)
- :mod:`voxelseg.layers`    differentiable layer ops built on the engine
- :mod:`voxelseg.attention` attention gating blocks
- :mod:`voxelseg.network`   encoder / dual-decoder model assembly
- :mod:`voxelseg.objectives` losses and evaluation metrics
- :mod:`voxelseg.optim`     AdamW and learning-rate schedules
- :mod:`voxelseg.data`      NIfTI I/O, preprocessing, augmentation, phantoms
- :mod:`voxelseg.cli`       command-line entry points
"""

__version__ = "0.1.0"
