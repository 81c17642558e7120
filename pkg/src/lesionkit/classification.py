"""Lesion classification with multi-class, paired-binary and ensembled networks."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import functional as F
from .autodiff.engine import no_grad
from .exceptions import ConfigurationError
from .imaging import as_float_image, resize_image, round_half_up, to_batch
from .resnet import Network

CLASSES = ("melanoma", "seborrheic_keratosis", "nevus")
MELANOMA, SK, NEVUS = range(3)
MELANOCYTIC = {"melanoma": True, "seborrheic_keratosis": False, "nevus": True}
STRATEGIES = ("multiclass", "binary", "ensemble")


def label_index(label) -> int:
    if isinstance(label, (int, np.integer)):
        if not 0 <= label < 3:
            raise ValueError(f"class index out of range: {label}")
        return int(label)
    try:
        return CLASSES.index(label)
    except ValueError:
        raise ValueError(f"unknown class label {label!r}; expected one of {CLASSES}") from None


@dataclass(frozen=True)
class ClassScores:
    p_melanoma: float
    p_sk: float
    p_nevus: float
    strategy: str

    def as_array(self) -> np.ndarray:
        return np.array([self.p_melanoma, self.p_sk, self.p_nevus])


@dataclass
class BinaryPair:
    """Independently trained melanoma-vs-rest and SK-vs-rest networks."""

    melanoma: Network
    sk: Network

    def __post_init__(self):
        for name, net in (("melanoma", self.melanoma), ("sk", self.sk)):
            _require_head(net, 2, f"{name} network")


def _require_head(net: Network, k: int, what: str = "network"):
    if net.is_segmentation or net.num_outputs != k:
        raise ConfigurationError(f"{what} must have a {k}-way classifier head")


def resize_short_side(image, target: int = 224) -> np.ndarray:
    """Resize (up or down) so the shorter axis equals ``target``."""
    img = as_float_image(image)
    h, w = img.shape[:2]
    scale = target / min(h, w)
    if h <= w:
        size = (target, max(target, round_half_up(w * scale)))
    else:
        size = (max(target, round_half_up(h * scale)), target)
    return resize_image(img, *size)


def center_crop(image, size: int) -> np.ndarray:
    h, w = image.shape[:2]
    top, left = (h - size) // 2, (w - size) // 2
    return np.ascontiguousarray(image[top:top + size, left:left + size])


def preprocess_cls(image, target_short_side: int = 224) -> np.ndarray:
    """Short-side resize to ``target_short_side`` then a centered square crop."""
    if target_short_side < 1:
        raise ConfigurationError("target_short_side must be positive")
    return center_crop(resize_short_side(image, target_short_side), target_short_side)


def class_probabilities(net: Network, images) -> np.ndarray:
    """Softmax outputs (float64, N×k) for a list of same-size images."""
    if net.is_segmentation:
        raise ConfigurationError("classification needs a classifier head")
    x = to_batch(images, net.dtype)
    was_training = net.training
    net.eval()
    try:
        with no_grad():
            probs = F.softmax(net(x), axis=1).data
    finally:
        net.train(was_training)
    return probs.astype(np.float64)


def binary_to_three(p_mel, p_sk) -> np.ndarray:
    """Complete two positive-class scores with p_nevus = (1 - p_mel)(1 - p_sk)."""
    p_mel, p_sk = np.asarray(p_mel, float), np.asarray(p_sk, float)
    return np.stack([p_mel, p_sk, (1 - p_mel) * (1 - p_sk)], axis=-1)


def ensemble_arrays(multiclass, binary) -> np.ndarray:
    return (np.asarray(multiclass, float) + np.asarray(binary, float)) / 2


def multiclass_scores(net: Network, images) -> np.ndarray:
    _require_head(net, 3, "multi-class network")
    return class_probabilities(net, images)


def binary_scores(pair: BinaryPair, images) -> np.ndarray:
    p_mel = class_probabilities(pair.melanoma, images)[:, 1]
    p_sk = class_probabilities(pair.sk, images)[:, 1]
    return binary_to_three(p_mel, p_sk)


def ensemble_scores(net3: Network, pair: BinaryPair, images) -> np.ndarray:
    return ensemble_arrays(multiclass_scores(net3, images), binary_scores(pair, images))


def _scores(row, strategy) -> ClassScores:
    return ClassScores(float(row[0]), float(row[1]), float(row[2]), strategy)


def predict_multiclass(net: Network, image) -> ClassScores:
    return _scores(multiclass_scores(net, [image])[0], "multiclass")


def predict_binary(pair: BinaryPair, image) -> ClassScores:
    return _scores(binary_scores(pair, [image])[0], "binary-pair")


def predict_ensemble(net3: Network, pair: BinaryPair, image) -> ClassScores:
    return _scores(ensemble_scores(net3, pair, [image])[0], "ensemble")
