"""Parameter containers and initializers shared by network layers."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .engine import Variable


@dataclass
class BatchNormState:
    """Learnable scale/shift plus running statistics for one batch-norm layer."""

    scale: Variable
    shift: Variable
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = 1e-5
    momentum: float = 0.1
    training: bool = field(default=True)

    def __post_init__(self):
        if not 0.0 < self.momentum < 1.0:
            raise ValueError(f"momentum must lie in (0, 1), got {self.momentum}")
        if self.eps <= 0:
            raise ValueError(f"eps must be positive, got {self.eps}")
        if np.any(self.running_var <= 0):
            raise ValueError("running variance must be strictly positive")

    @classmethod
    def identity(cls, channels: int, dtype=np.float32, **kwargs) -> "BatchNormState":
        return cls(
            scale=Variable(np.ones(channels, dtype=dtype), requires_grad=True),
            shift=Variable(np.zeros(channels, dtype=dtype), requires_grad=True),
            running_mean=np.zeros(channels, dtype=dtype),
            running_var=np.ones(channels, dtype=dtype),
            **kwargs,
        )

    @property
    def num_channels(self) -> int:
        return self.scale.shape[0]


def he_normal(rng: np.random.Generator, shape, fan_in: int, dtype=np.float32) -> np.ndarray:
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


def bilinear_upsampling_kernel(channels: int, kernel: int, dtype=np.float32) -> np.ndarray:
    """Per-channel bilinear interpolation kernel for a transposed convolution."""
    factor = (kernel + 1) // 2
    center = factor - 1 if kernel % 2 == 1 else factor - 0.5
    og = np.arange(kernel)
    filt = 1 - np.abs(og - center) / factor
    k2 = np.outer(filt, filt)
    w = np.zeros((channels, channels, kernel, kernel), dtype=dtype)
    w[np.arange(channels), np.arange(channels)] = k2
    return w
