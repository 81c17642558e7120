"""Input validation for the estimator API.

Images arrive as lists of H×W×3 arrays (sizes may differ between images),
so sklearn's 2-d ``check_array`` does not apply; these helpers play its role.
"""
from __future__ import annotations

import numpy as np

from .classification import label_index
from .imaging import as_float_image


def check_image(image, channels: int = 3) -> np.ndarray:
    img = as_float_image(image)
    if img.shape[2] != channels:
        raise ValueError(f"expected {channels}-channel images, got shape {img.shape}")
    if not np.isfinite(img).all():
        raise ValueError("image contains NaN or Inf")
    return img


def check_images(X, channels: int = 3) -> list:
    if isinstance(X, np.ndarray) and X.ndim == 3:
        X = [X]
    imgs = [check_image(x, channels) for x in X]
    if not imgs:
        raise ValueError("received an empty image collection")
    return imgs


def check_masks(y, images) -> list:
    masks = [np.asarray(m).astype(bool) for m in y]
    if len(masks) != len(images):
        raise ValueError(f"{len(images)} images but {len(masks)} masks")
    for i, (img, m) in enumerate(zip(images, masks)):
        if m.shape != img.shape[:2]:
            raise ValueError(f"mask {i} has shape {m.shape}, image is {img.shape[:2]}")
    return masks


def check_labels(y, n: int) -> np.ndarray:
    labels = np.array([label_index(v) for v in y], dtype=np.intp)
    if len(labels) != n:
        raise ValueError(f"{n} images but {len(labels)} labels")
    return labels
