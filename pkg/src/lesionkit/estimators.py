"""scikit-learn compatible estimators wrapping the segmentation and
classification pipelines.

``X`` is always a list of H×W×3 images (uint8 or float in [0, 1]); image
sizes may differ. Hyperparameters are plain constructor arguments, so
``get_params``/``set_params``/``clone`` work as for any sklearn estimator.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .classification import (
    CLASSES,
    MELANOMA,
    SK,
    STRATEGIES,
    BinaryPair,
    binary_scores,
    ensemble_scores,
    multiclass_scores,
    preprocess_cls,
    resize_short_side,
)
from .data.weights import load_bundle, save_bundle
from .exceptions import ConfigurationError
from .imaging import resize_map
from .metrics import ClsResult, evaluate_cls, jaccard
from .resnet import HeadSpec, build, preset
from .segmentation import TtaConfig, binarize, preprocess_seg, segment
from .trainer import AugmentConfig, ScheduleSpec, TrainConfig, Trainer
from .validation import check_images, check_labels, check_masks


class LesionSegmenter(BaseEstimator):
    """Residual FCN segmenter trained with a fixed-rate then linear-decay phase.

    Parameters
    ----------
    preset : str
        Backbone layout name (see :data:`lesionkit.resnet.PRESETS`).
    epochs_fixed, lr_fixed : int, float
        First phase: constant learning rate.
    epochs_linear, lr_linear : int, float
        Second phase: learning rate decaying linearly to zero.
    scales : tuple of float or None
        Test-time scales fused with all four flips; ``None`` disables fusion.
    """

    def __init__(self, preset="tiny-8", epochs_fixed=60, lr_fixed=0.0016, epochs_linear=80,
                 lr_linear=0.0008, batch_size=10, momentum=0.9, crop_fraction=7 / 8,
                 target_long_side=500, scales=(0.8, 1.0, 1.2), threshold=0.5, seed=0):
        self.preset = preset
        self.epochs_fixed = epochs_fixed
        self.lr_fixed = lr_fixed
        self.epochs_linear = epochs_linear
        self.lr_linear = lr_linear
        self.batch_size = batch_size
        self.momentum = momentum
        self.crop_fraction = crop_fraction
        self.target_long_side = target_long_side
        self.scales = scales
        self.threshold = threshold
        self.seed = seed

    def phase_configs(self):
        aug = AugmentConfig(crop_fraction=self.crop_fraction)
        common = dict(batch_size=self.batch_size, momentum=self.momentum,
                      task="segmentation", augment=aug)
        return (
            TrainConfig(schedule=ScheduleSpec("fixed", self.lr_fixed, self.epochs_fixed),
                        seed=self.seed, **common),
            TrainConfig(schedule=ScheduleSpec("linear", self.lr_linear, self.epochs_linear),
                        seed=self.seed + 1, **common),
        )

    def _prepare(self, X, y):
        originals = check_images(X)
        masks = check_masks(y, originals)
        data = []
        for img, m in zip(originals, masks):
            small = preprocess_seg(img, self.target_long_side)
            if small.shape[:2] != m.shape:
                m = resize_map(m.astype(np.float64), *small.shape[:2]) >= 0.5
            data.append((small, m))
        return data

    def fit(self, X, y, X_finetune=None, y_finetune=None, checkpoint=None, on_epoch_end=None):
        """Train both phases; the second uses ``X_finetune`` when given.

        ``checkpoint`` resumes from a :class:`~lesionkit.trainer.Checkpoint`;
        ``on_epoch_end(trainer)`` is called after each epoch of either phase.
        """
        data1 = self._prepare(X, y)
        data2 = data1 if X_finetune is None else self._prepare(X_finetune, y_finetune)
        cfg1, cfg2 = self.phase_configs()
        if checkpoint is None:
            net = build(preset(self.preset, HeadSpec("segmentation", 2)), seed=self.seed)
            start_phase = 0
        else:
            net = build(checkpoint.spec, seed=self.seed)
            start_phase = checkpoint.phase
        self.history_ = []
        for phase, (cfg, data) in enumerate(((cfg1, data1), (cfg2, data2))):
            if phase < start_phase:
                continue
            if checkpoint is not None and phase == checkpoint.phase:
                trainer = Trainer.from_checkpoint(net, checkpoint, cfg)
            else:
                trainer = Trainer(net, cfg, phase)
            if cfg.epochs:
                trainer.run(data, on_epoch_end=on_epoch_end)
            self.history_.append(list(trainer.history))
        self.network_ = net
        return self

    def tta_config(self):
        return None if self.scales is None else TtaConfig(tuple(self.scales))

    def predict_proba(self, X):
        """Lesion-probability maps at each image's original resolution."""
        check_is_fitted(self, "network_")
        cfg = self.tta_config()
        return [segment(self.network_, img, cfg, self.target_long_side) for img in check_images(X)]

    def predict(self, X):
        return [binarize(p, self.threshold) for p in self.predict_proba(X)]

    def score(self, X, y):
        """Mean Jaccard index against ground-truth masks."""
        preds = self.predict(X)
        masks = check_masks(y, check_images(X))
        return float(np.mean([jaccard(p, m) for p, m in zip(preds, masks)]))

    def save(self, path):
        check_is_fitted(self, "network_")
        save_bundle(path, {"segmentation": self.network_}, estimator="LesionSegmenter",
                    params=_jsonable(self.get_params()))

    @classmethod
    def load(cls, path):
        nets, meta = load_bundle(path)
        if "segmentation" not in nets:
            raise ConfigurationError(f"{path} holds no segmentation network")
        est = cls(**_params_from(meta, cls))
        est.network_ = nets["segmentation"]
        return est


class LesionClassifier(ClassifierMixin, BaseEstimator):
    """Melanoma / seborrheic keratosis / nevus classifier.

    ``strategy`` selects a 3-way softmax network (``"multiclass"``), two
    one-vs-rest 2-way networks (``"binary"``) or the per-class mean of both
    (``"ensemble"``). ``predict_proba`` columns follow :attr:`classes_`; for
    the binary strategy the nevus column is ``(1 - p_mel)(1 - p_sk)`` and
    rows need not sum to one.
    """

    def __init__(self, strategy="ensemble", preset="tiny-8", epochs=150, lr=0.01,
                 batch_size=90, momentum=0.9, image_size=224, class_weights=None, seed=0):
        self.strategy = strategy
        self.preset = preset
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size
        self.momentum = momentum
        self.image_size = image_size
        self.class_weights = class_weights
        self.seed = seed

    def train_config(self):
        return TrainConfig(
            batch_size=self.batch_size,
            schedule=ScheduleSpec("linear", self.lr, self.epochs),
            momentum=self.momentum,
            seed=self.seed,
            task="classification",
            augment=AugmentConfig(crop_fraction=None, crop_size=self.image_size),
            class_weights=self.class_weights,
        )

    def _members(self):
        if self.strategy not in STRATEGIES:
            raise ConfigurationError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        members = []
        if self.strategy in ("multiclass", "ensemble"):
            members.append(("multiclass", 3, None))
        if self.strategy in ("binary", "ensemble"):
            members += [("melanoma", 2, MELANOMA), ("sk", 2, SK)]
        return members

    def fit(self, X, y):
        images = [resize_short_side(img, self.image_size) for img in check_images(X)]
        labels = check_labels(y, len(images))
        cfg = self.train_config()
        self.classes_ = np.array(CLASSES)
        self.networks_, self.history_ = {}, {}
        for key, k, positive in self._members():
            targets = labels if positive is None else (labels == positive).astype(np.intp)
            net = build(preset(self.preset, HeadSpec("classifier", k)), seed=self.seed)
            trainer = Trainer(net, cfg)
            trainer.run(list(zip(images, targets)))
            self.networks_[key] = net
            self.history_[key] = list(trainer.history)
        return self

    def _inputs(self, X):
        return [preprocess_cls(img, self.image_size) for img in check_images(X)]

    def predict_proba(self, X):
        check_is_fitted(self, "networks_")
        images = self._inputs(X)
        if self.strategy == "multiclass":
            return multiclass_scores(self.networks_["multiclass"], images)
        pair = BinaryPair(self.networks_["melanoma"], self.networks_["sk"])
        if self.strategy == "binary":
            return binary_scores(pair, images)
        return ensemble_scores(self.networks_["multiclass"], pair, images)

    def strategy_scores(self, X) -> dict:
        """Scores of every trained strategy (for ensemble diagnostics)."""
        check_is_fitted(self, "networks_")
        images = self._inputs(X)
        out = {}
        if "multiclass" in self.networks_:
            out["multiclass"] = multiclass_scores(self.networks_["multiclass"], images)
        if "melanoma" in self.networks_:
            pair = BinaryPair(self.networks_["melanoma"], self.networks_["sk"])
            out["binary"] = binary_scores(pair, images)
        if len(out) == 2:
            out["ensemble"] = (out["multiclass"] + out["binary"]) / 2
        return out

    def predict(self, X):
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]

    def evaluate(self, X, y) -> ClsResult:
        return evaluate_cls(self.predict_proba(X), list(y))

    def save(self, path):
        check_is_fitted(self, "networks_")
        save_bundle(path, self.networks_, estimator="LesionClassifier",
                    params=_jsonable(self.get_params()))

    @classmethod
    def load(cls, path):
        nets, meta = load_bundle(path)
        est = cls(**_params_from(meta, cls))
        est.networks_ = nets
        est.classes_ = np.array(CLASSES)
        return est


def _jsonable(params: dict) -> dict:
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in params.items()}


def _params_from(meta: dict, cls) -> dict:
    params = dict((meta or {}).get("params", {}))
    if params.get("scales") is not None and "scales" in params:
        params["scales"] = tuple(params["scales"])
    valid = cls._get_param_names()
    return {k: v for k, v in params.items() if k in valid}
