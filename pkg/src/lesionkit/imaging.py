"""Image-array helpers shared by the segmentation and classification paths.

Images are H×W×C arrays: ``uint8`` in [0, 255] or floating point in [0, 1].
Network batches are float32 N×C×H×W, normalized per :data:`MEAN`/:data:`STD`.
"""
from __future__ import annotations

import math

import numpy as np

from .autodiff import functional as F

MEAN = 0.5
STD = 0.25


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def as_float_image(image) -> np.ndarray:
    arr = np.asarray(image)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"expected a non-empty H×W×C image, got shape {arr.shape}")
    if arr.dtype == np.uint8:
        return arr.astype(np.float32) / np.float32(255)
    return arr.astype(np.float32, copy=False)


def resize_image(image, height: int, width: int) -> np.ndarray:
    img = as_float_image(image)
    if img.shape[:2] == (height, width):
        return img
    chw = np.ascontiguousarray(img.transpose(2, 0, 1))
    out = F.bilinear_resize(chw, height, width).data
    return np.ascontiguousarray(out.transpose(1, 2, 0))


def resize_map(values, height: int, width: int) -> np.ndarray:
    """Bilinear resize of a single H×W map, keeping its dtype."""
    arr = np.asarray(values)
    if arr.shape == (height, width):
        return arr
    return F.bilinear_resize(arr, height, width).data


def flip_array(arr, axis: str) -> np.ndarray:
    """Flip the two leading spatial axes of an H×W or H×W×C array."""
    arr = np.asarray(arr)
    axes = {"identity": (), "horizontal": (1,), "vertical": (0,), "both": (0, 1)}[axis]
    return np.flip(arr, axes) if axes else arr


def to_batch(images, dtype=np.float32) -> np.ndarray:
    imgs = [as_float_image(im) for im in images]
    shapes = {im.shape for im in imgs}
    if len(shapes) != 1:
        raise ValueError(f"batch images must share one shape, got {sorted(shapes)}")
    t = np.dtype(dtype).type
    x = np.stack(imgs).transpose(0, 3, 1, 2).astype(t)
    return np.ascontiguousarray((x - t(MEAN)) / t(STD))
