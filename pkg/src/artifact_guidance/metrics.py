"""Artifact-reduction metrics over batches of decoded outputs and their masks.

A cell counts as an artifact when its probability is >= the threshold
(inclusive). MAE splits use the *baseline* mask to define the artifact (A)
and non-artifact (NA) regions; an empty region yields ``None``.
"""
from dataclasses import dataclass

import numpy as np

from .detector import binarize
from .errors import InputError


@dataclass
class EvalBatch:
    images: list
    masks: list
    base_images: list = None
    base_masks: list = None

    def __post_init__(self):
        if len(self.images) != len(self.masks):
            raise InputError("images and masks must be parallel lists")
        if self.base_images is not None and len(self.base_images) != len(self.images):
            raise InputError("base_images must parallel images")
        if self.base_masks is not None and len(self.base_masks) != len(self.images):
            raise InputError("base_masks must parallel images")


def has_artifact(mask, threshold=0.5):
    return bool(binarize(mask, threshold).any())


def mean_artifact_freq(masks, threshold=0.5):
    if len(masks) == 0:
        raise InputError("mean artifact frequency needs at least one mask")
    return 100.0 * sum(has_artifact(m, threshold) for m in masks) / len(masks)


def artifact_pixel_ratio(mask, threshold=0.5):
    b = binarize(mask, threshold)
    return 100.0 * np.count_nonzero(b) / b.size


def mean_artifact_pixel_ratio(masks, threshold=0.5):
    if len(masks) == 0:
        raise InputError("artifact pixel ratio needs at least one mask")
    return float(np.mean([artifact_pixel_ratio(m, threshold) for m in masks]))


def mae_split(image, base_image, base_mask, threshold=0.5):
    """Return ``(mae, mae_A, mae_NA)``; a region without cells gives ``None``."""
    image = np.asarray(image, dtype=np.float64)
    base_image = np.asarray(base_image, dtype=np.float64)
    a = binarize(base_mask, threshold)
    if not (image.shape == base_image.shape == a.shape):
        raise InputError(f"shape mismatch: {image.shape}, {base_image.shape}, {a.shape}")
    err = np.abs(image - base_image)
    mae_a = float(err[a].mean()) if a.any() else None
    mae_na = float(err[~a].mean()) if (~a).any() else None
    return float(err.mean()), mae_a, mae_na


def evaluate(batch, threshold=0.5):
    """Batch summary: MAF, mean APR and (if baselines are given) mean MAE splits."""
    out = {"n": len(batch.images),
           "maf": mean_artifact_freq(batch.masks, threshold),
           "apr_mean": mean_artifact_pixel_ratio(batch.masks, threshold)}
    if batch.base_images is not None and batch.base_masks is not None:
        splits = [mae_split(im, b, bm, threshold)
                  for im, b, bm in zip(batch.images, batch.base_images, batch.base_masks)]
        for k, name in enumerate(("mae", "mae_a", "mae_na")):
            vals = [s[k] for s in splits if s[k] is not None]
            out[name] = float(np.mean(vals)) if vals else None
    return out
