"""SGD training: learning-rate schedules, coupled crop/flip augmentation,
two-phase fine-tuning and resumable checkpoints."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .autodiff import functional as F
from .autodiff.engine import backward
from .exceptions import ConfigurationError, NonFiniteError, ShapeError
from .imaging import as_float_image, round_half_up, to_batch
from .resnet import Network, NetworkSpec

log = logging.getLogger(__name__)


# ------------------------------------------------------------------ schedule


@dataclass(frozen=True)
class ScheduleSpec:
    kind: str = "fixed"
    base_lr: float = 0.01
    total_epochs: int = 1

    def __post_init__(self):
        if self.kind not in ("fixed", "linear"):
            raise ConfigurationError(f"unknown schedule kind {self.kind!r}")
        if not self.base_lr > 0:
            raise ConfigurationError(f"base_lr must be positive, got {self.base_lr}")
        if self.total_epochs < 0:
            raise ConfigurationError("total_epochs must be non-negative")


def lr_at(schedule: ScheduleSpec, epoch: int) -> float:
    """Learning rate for a 0-based ``epoch``; linear decays to 0 at the end."""
    if not 0 <= epoch <= schedule.total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {schedule.total_epochs}]")
    if schedule.kind == "fixed":
        return schedule.base_lr
    return schedule.base_lr * (1 - epoch / schedule.total_epochs)


# -------------------------------------------------------------- augmentation


@dataclass(frozen=True)
class AugmentConfig:
    """Random crop plus independent horizontal/vertical flips.

    Exactly one of ``crop_fraction`` (of each side, taken over the smallest
    image in the batch) or ``crop_size`` (square, in pixels) applies;
    ``crop_size`` wins when both are set.
    """

    crop_fraction: float | None = 7 / 8
    crop_size: int | None = None
    flip_prob: float = 0.5

    def crop_shape(self, shapes):
        min_h = min(s[0] for s in shapes)
        min_w = min(s[1] for s in shapes)
        if self.crop_size is not None:
            if self.crop_size > min_h or self.crop_size > min_w:
                raise ConfigurationError(
                    f"crop {self.crop_size} is larger than the image ({min_h}x{min_w})")
            return self.crop_size, self.crop_size
        if self.crop_fraction is None:
            return min_h, min_w
        return (max(1, round_half_up(min_h * self.crop_fraction)),
                max(1, round_half_up(min_w * self.crop_fraction)))


@dataclass(frozen=True)
class Transform:
    top: int
    left: int
    height: int
    width: int
    hflip: bool
    vflip: bool

    def apply(self, arr):
        out = arr[self.top:self.top + self.height, self.left:self.left + self.width]
        if self.hflip:
            out = out[:, ::-1]
        if self.vflip:
            out = out[::-1]
        return np.ascontiguousarray(out)

    def map_point(self, row, col):
        """Where source pixel (row, col) lands; None when cropped away."""
        r, c = row - self.top, col - self.left
        if not (0 <= r < self.height and 0 <= c < self.width):
            return None
        if self.hflip:
            c = self.width - 1 - c
        if self.vflip:
            r = self.height - 1 - r
        return r, c


def draw_transform(rng: np.random.Generator, shape, crop_hw, flip_prob=0.5) -> Transform:
    h, w = shape[:2]
    ch, cw = crop_hw
    if ch > h or cw > w:
        raise ConfigurationError(f"crop {ch}x{cw} is larger than image {h}x{w}")
    top = int(rng.integers(0, h - ch + 1))
    left = int(rng.integers(0, w - cw + 1))
    hflip = bool(rng.random() < flip_prob)
    vflip = bool(rng.random() < flip_prob)
    return Transform(top, left, ch, cw, hflip, vflip)


def augment(image, mask=None, rng=None, crop_hw=None, flip_prob=0.5):
    """Random crop and flips; ``mask`` (if given) gets the identical transform."""
    rng = rng if rng is not None else np.random.default_rng()
    img = np.asarray(image)
    crop_hw = crop_hw or img.shape[:2]
    t = draw_transform(rng, img.shape, crop_hw, flip_prob)
    return t.apply(img), (None if mask is None else t.apply(np.asarray(mask)))


# ----------------------------------------------------------------- optimizer


def sgd_step(params, grads, lr, momentum, velocity) -> None:
    """In place: ``v <- momentum * v + g``; ``w <- w - lr * v``.

    ``params``/``grads`` are name -> array mappings; ``velocity`` is a dict
    updated in place (missing entries start at zero).
    """
    for name, w in params.items():
        g = grads[name]
        if g.shape != w.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, expected {w.shape}")
        v = velocity.get(name)
        if v is None:
            v = velocity[name] = np.zeros_like(w)
        v *= w.dtype.type(momentum)
        v += g
        w -= w.dtype.type(lr) * v


# -------------------------------------------------------------------- config


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 10
    schedule: ScheduleSpec = field(default_factory=ScheduleSpec)
    momentum: float = 0.9
    seed: int = 0
    task: str = "classification"
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    class_weights: str | None = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be at least 1")
        if not 0 <= self.momentum < 1:
            raise ConfigurationError("momentum must lie in [0, 1)")
        if self.task not in ("classification", "segmentation"):
            raise ConfigurationError(f"unknown task {self.task!r}")
        if self.class_weights not in (None, "balanced"):
            raise ConfigurationError("class_weights must be None or 'balanced'")

    @property
    def epochs(self) -> int:
        return self.schedule.total_epochs

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d) -> "TrainConfig":
        d = dict(d)
        d["schedule"] = ScheduleSpec(**d["schedule"])
        d["augment"] = AugmentConfig(**d["augment"])
        return cls(**d)


def challenge_seg_recipe(seed: int = 0):
    """Segmentation recipe: 60 epochs fixed 0.0016, then 80 linear from 0.0008."""
    aug = AugmentConfig(crop_fraction=7 / 8)
    phase1 = TrainConfig(10, ScheduleSpec("fixed", 0.0016, 60), seed=seed,
                         task="segmentation", augment=aug)
    phase2 = TrainConfig(10, ScheduleSpec("linear", 0.0008, 80), seed=seed + 1,
                         task="segmentation", augment=aug)
    return phase1, phase2


def challenge_cls_recipe(seed: int = 0, image_size: int = 224):
    """Classification recipe: 150 epochs, linear from 0.01, batch 90."""
    return TrainConfig(90, ScheduleSpec("linear", 0.01, 150), seed=seed,
                       task="classification",
                       augment=AugmentConfig(crop_fraction=None, crop_size=image_size))


# ---------------------------------------------------------------- checkpoint


@dataclass
class Checkpoint:
    """Everything needed to resume training bit-exactly at an epoch boundary."""

    spec: NetworkSpec
    state: dict
    velocity: dict
    epoch: int
    config: TrainConfig
    history: list
    steps: int = 0
    phase: int = 0

    def metadata(self) -> dict:
        return {
            "kind": "checkpoint",
            "phase": self.phase,
            "spec": self.spec.to_dict(),
            "epoch": self.epoch,
            "steps": self.steps,
            "rng": {"seed": self.config.seed, "next_epoch": self.epoch},
            "schedule_position": {"epoch": self.epoch, **asdict(self.config.schedule)},
            "config": self.config.to_dict(),
            "history": [float(h) for h in self.history],
        }


# ------------------------------------------------------------------- trainer


def _targets_array(targets, task):
    if task == "classification":
        return np.asarray(targets, dtype=np.intp)
    return np.stack([np.asarray(t).astype(np.intp) for t in targets])


class Trainer:
    """Owns the optimizer state for one network during one training phase."""

    def __init__(self, net: Network, config: TrainConfig, phase: int = 0):
        self.net = net
        self.config = config
        self.phase = phase
        self.velocity: dict = {}
        self.epoch = 0
        self.steps = 0
        self.history: list = []

    @classmethod
    def from_checkpoint(cls, net: Network, ckpt: Checkpoint, config: TrainConfig | None = None):
        net.load_state_dict(ckpt.state)
        trainer = cls(net, config or ckpt.config, ckpt.phase)
        trainer.velocity = {k: v.copy() for k, v in ckpt.velocity.items()}
        trainer.epoch = ckpt.epoch
        trainer.steps = ckpt.steps
        trainer.history = list(ckpt.history)
        return trainer

    def checkpoint(self) -> Checkpoint:
        return Checkpoint(self.net.spec, self.net.state_dict(),
                          {k: v.copy() for k, v in self.velocity.items()},
                          self.epoch, self.config, list(self.history), self.steps, self.phase)

    def _class_weights(self, labels, k):
        if self.config.class_weights is None:
            return None
        counts = np.bincount(labels, minlength=k).astype(np.float64)
        weights = np.where(counts > 0, counts.sum() / (k * np.maximum(counts, 1)), 0.0)
        return weights

    def _batch(self, images, targets, idx, rng):
        cfg = self.config
        crop = cfg.augment.crop_shape([images[i].shape for i in idx])
        xs, ys = [], []
        for i in idx:
            t = draw_transform(rng, images[i].shape, crop, cfg.augment.flip_prob)
            xs.append(t.apply(images[i]))
            ys.append(t.apply(targets[i]) if cfg.task == "segmentation" else targets[i])
        return to_batch(xs, self.net.dtype), np.asarray(ys)

    def run(self, dataset, until_epoch: int | None = None, on_epoch_end=None):
        """Train from the current epoch up to ``until_epoch`` (default: all).

        ``on_epoch_end(trainer)`` runs after every completed epoch, e.g. to
        write a checkpoint.
        """
        cfg = self.config
        if len(dataset) == 0:
            raise ConfigurationError("cannot train on an empty dataset")
        images = [as_float_image(img) for img, _ in dataset]
        targets = [t for _, t in dataset]
        if cfg.task == "segmentation":
            if any(t is None for t in targets):
                raise ConfigurationError("segmentation training needs a mask for every image")
            if not self.net.is_segmentation:
                raise ConfigurationError("segmentation task needs a segmentation head")
            targets = [np.asarray(t).astype(np.intp) for t in targets]
            for img, m in zip(images, targets):
                if m.shape != img.shape[:2]:
                    raise ShapeError(f"mask shape {m.shape} does not match image {img.shape[:2]}")
            weights = None
        else:
            targets = np.asarray(targets, dtype=np.intp)
            weights = self._class_weights(targets, self.net.num_outputs)
        stop = cfg.epochs if until_epoch is None else min(until_epoch, cfg.epochs)
        params = self.net.named_parameters()
        n = len(images)
        self.net.train()
        while self.epoch < stop:
            lr = lr_at(cfg.schedule, self.epoch)
            # counter-based stream: an epoch's draws depend only on (seed, epoch)
            rng = np.random.default_rng((cfg.seed, self.epoch))
            order = rng.permutation(n)
            total, count = 0.0, 0
            for start in range(0, n, cfg.batch_size):
                idx = order[start:start + cfg.batch_size]
                x, y = self._batch(images, targets, idx, rng)
                if cfg.task == "segmentation":
                    logits = self.net.score_logits(x)
                else:
                    logits = self.net(x)
                loss = F.cross_entropy(logits, y, weights)
                value = float(loss.data)
                if not math.isfinite(value):
                    raise NonFiniteError(
                        f"loss became {value} at epoch {self.epoch}, step {self.steps}")
                for p in params.values():
                    p.grad = None
                backward(loss, params.values())
                sgd_step({k: p.data for k, p in params.items()},
                         {k: p.grad for k, p in params.items()},
                         lr, cfg.momentum, self.velocity)
                self.steps += 1
                total += value * len(idx)
                count += len(idx)
            self.history.append(total / count)
            log.info("epoch %d/%d lr=%.6g loss=%.5f", self.epoch + 1, cfg.epochs, lr,
                     self.history[-1])
            self.epoch += 1
            if on_epoch_end is not None:
                on_epoch_end(self)
        return self.history


def fit(net: Network, dataset, config: TrainConfig, checkpoint: Checkpoint | None = None,
        until_epoch: int | None = None):
    """Train ``net`` in place; returns ``(net, per-epoch mean loss history)``.

    ``dataset`` is a sequence of ``(image, target)`` pairs, where the target
    is a class index or a boolean mask. Passing ``checkpoint`` resumes from it.
    """
    trainer = Trainer.from_checkpoint(net, checkpoint, config) if checkpoint else Trainer(net, config)
    history = trainer.run(dataset, until_epoch)
    return net, history


def fit_two_phase(net: Network, dataset1, dataset2, cfg1: TrainConfig, cfg2: TrainConfig):
    """Fixed-rate fine-tuning on ``dataset1`` followed by a second phase on ``dataset2``."""
    if cfg1.epochs:
        fit(net, dataset1, cfg1)
    if cfg2.epochs:
        fit(net, dataset2, cfg2)
    return net


def scaled_recipe(cfg: TrainConfig, epochs: int, **changes) -> TrainConfig:
    """Same recipe with a different epoch budget (and optional overrides)."""
    return replace(cfg, schedule=replace(cfg.schedule, total_epochs=epochs), **changes)
