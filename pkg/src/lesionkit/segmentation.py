"""Lesion segmentation: preprocessing, score masks, flip/scale fusion, thresholds."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import functional as F
from .autodiff.engine import no_grad
from .exceptions import ConfigurationError
from .imaging import as_float_image, flip_array, resize_image, resize_map, round_half_up, to_batch
from .resnet import Network

FLIPS = ("identity", "horizontal", "vertical", "both")
DEFAULT_SCALES = (0.8, 1.0, 1.2)
LESION = 1


@dataclass(frozen=True)
class TtaConfig:
    """Test-time augmentation: every scale is paired with all four flips."""

    scales: tuple = DEFAULT_SCALES
    flips: tuple = FLIPS
    fusion: str = "mean"

    def __post_init__(self):
        object.__setattr__(self, "scales", tuple(float(s) for s in self.scales))
        if not self.scales:
            raise ConfigurationError("TtaConfig needs at least one scale")
        if any(s <= 0 for s in self.scales):
            raise ConfigurationError(f"scales must be positive, got {self.scales}")
        if tuple(sorted(self.flips)) != tuple(sorted(FLIPS)):
            raise ConfigurationError(f"flip set must be exactly {FLIPS}")
        if self.fusion != "mean":
            raise ConfigurationError(f"unsupported fusion {self.fusion!r}")


def long_side_size(height: int, width: int, target: int = 500):
    """Output size of the downsample-only longer-axis rule."""
    longer = max(height, width)
    if longer <= target:
        return height, width
    scale = target / longer
    return max(1, round_half_up(height * scale)), max(1, round_half_up(width * scale))


def preprocess_seg(image, target_long_side: int = 500) -> np.ndarray:
    """Downsample so the longer axis is at most ``target_long_side``."""
    img = as_float_image(image)
    if target_long_side < 1:
        raise ConfigurationError("target_long_side must be positive")
    h, w = long_side_size(img.shape[0], img.shape[1], target_long_side)
    return resize_image(img, h, w)


def _require_segmentation(net: Network):
    if not net.is_segmentation:
        raise ConfigurationError("this operation needs a network with a segmentation head")


def predict_masks(net: Network, images) -> list:
    """Lesion probability maps (float64, input resolution) for same-size images."""
    _require_segmentation(net)
    x = to_batch(images, net.dtype)
    was_training = net.training
    net.eval()
    try:
        with no_grad():
            logits = net.score_logits(x)
            probs = F.softmax(logits, axis=1).data
    finally:
        net.train(was_training)
    return [p[LESION].astype(np.float64) for p in probs]


def predict_mask(net: Network, image) -> np.ndarray:
    """Per-pixel lesion probability at the image's own resolution."""
    return predict_masks(net, [image])[0]


def scaled_size(height: int, width: int, scale: float):
    return max(1, round_half_up(height * scale)), max(1, round_half_up(width * scale))


def augmented_predictions(net: Network, image, cfg: TtaConfig = TtaConfig()) -> list:
    """All |scales|×4 predictions, realigned to the image frame and size."""
    _require_segmentation(net)
    img = as_float_image(image)
    h, w = img.shape[:2]
    masks = []
    for scale in cfg.scales:
        sh, sw = scaled_size(h, w, scale)
        if min(sh, sw) < net.min_input_size:
            raise ConfigurationError(
                f"scale {scale} shrinks the image to {sh}x{sw}, below the network minimum")
        scaled = resize_image(img, sh, sw)
        views = [np.ascontiguousarray(flip_array(scaled, f)) for f in cfg.flips]
        for flip, pred in zip(cfg.flips, predict_masks(net, views)):
            realigned = np.ascontiguousarray(flip_array(pred, flip))
            masks.append(resize_map(realigned, h, w))
    return masks


def tta_fuse(net: Network, image, cfg: TtaConfig = TtaConfig()) -> np.ndarray:
    """Mean lesion probability over the scale × flip augmentation set."""
    masks = augmented_predictions(net, image, cfg)
    total = np.zeros_like(masks[0])
    for m in masks:
        total += m
    return total / len(masks)


def segment(net: Network, image, cfg: TtaConfig | None = TtaConfig(),
            target_long_side: int = 500) -> np.ndarray:
    """Full inference path: preprocess, predict (optionally fused), restore size."""
    img = as_float_image(image)
    small = preprocess_seg(img, target_long_side)
    scores = predict_mask(net, small) if cfg is None else tta_fuse(net, small, cfg)
    scores = resize_map(scores, img.shape[0], img.shape[1])
    return np.clip(scores, 0.0, 1.0)


def binarize(mask, threshold: float = 0.5) -> np.ndarray:
    """Boolean lesion mask: True where score >= threshold."""
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    return np.asarray(mask) >= threshold
