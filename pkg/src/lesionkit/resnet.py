"""Declarative residual networks: specs, layers, building and surgery.

A :class:`NetworkSpec` describes a stem convolution, a list of residual
stages and a head. :func:`build` turns a spec into a :class:`Network` whose
parameters are initialized deterministically from a seed.
"""
from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .autodiff import functional as F
from .autodiff.engine import Variable
from .autodiff.state import BatchNormState, bilinear_upsampling_kernel, he_normal
from .exceptions import ConfigurationError, ShapeError

# ---------------------------------------------------------------------- specs


@dataclass(frozen=True)
class StemSpec:
    channels: int = 8
    kernel: int = 3
    stride: int = 1
    pool: bool = False


@dataclass(frozen=True)
class StageSpec:
    blocks: int
    width: int
    stride: int = 1


@dataclass(frozen=True)
class HeadSpec:
    kind: str = "classifier"
    outputs: int = 3


@dataclass(frozen=True)
class ResidualBlockSpec:
    """One basic block: two 3×3 convs, each followed by batch norm."""

    in_channels: int
    out_channels: int
    stride: int = 1

    @property
    def conv_layers(self):
        return ((3, self.out_channels, self.stride), (3, self.out_channels, 1))

    @property
    def shortcut(self) -> str:
        if self.stride != 1 or self.in_channels != self.out_channels:
            return "projection"
        return "identity"


@dataclass(frozen=True)
class NetworkSpec:
    name: str
    stem: StemSpec
    stages: tuple
    head: HeadSpec
    in_channels: int = 3

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(
            s if isinstance(s, StageSpec) else StageSpec(*s) for s in self.stages))
        self.validate()

    def validate(self):
        if self.in_channels < 1:
            raise ConfigurationError("in_channels must be positive")
        st = self.stem
        if st.channels < 1 or st.kernel < 1 or st.stride < 1:
            raise ConfigurationError(f"invalid stem {st}")
        if not self.stages:
            raise ConfigurationError("a network needs at least one stage")
        for i, s in enumerate(self.stages):
            if s.blocks < 1 or s.width < 1 or s.stride < 1:
                raise ConfigurationError(f"stage {i} has non-positive dimensions: {s}")
        if self.head.kind == "classifier":
            if self.head.outputs not in (2, 3):
                raise ConfigurationError(
                    f"classifier head must have 2 or 3 outputs, got {self.head.outputs}")
        elif self.head.kind == "segmentation":
            if self.head.outputs < 2:
                raise ConfigurationError("segmentation head needs at least 2 score channels")
        else:
            raise ConfigurationError(f"unknown head kind {self.head.kind!r}")

    def block_specs(self):
        """Nested list ``[stage][block] -> ResidualBlockSpec``."""
        out, cin = [], self.stem.channels
        for stage in self.stages:
            blocks = []
            for b in range(stage.blocks):
                blocks.append(ResidualBlockSpec(cin, stage.width, stage.stride if b == 0 else 1))
                cin = stage.width
            out.append(blocks)
        return out

    @property
    def total_stride(self) -> int:
        s = self.stem.stride * (2 if self.stem.pool else 1)
        for stage in self.stages:
            s *= stage.stride
        return s

    def with_head(self, head: HeadSpec) -> "NetworkSpec":
        return replace(self, head=head)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stages"] = [asdict(s) for s in self.stages]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        return cls(
            name=d["name"],
            stem=StemSpec(**d["stem"]),
            stages=tuple(StageSpec(**s) for s in d["stages"]),
            head=HeadSpec(**d["head"]),
            in_channels=d.get("in_channels", 3),
        )


PRESETS = {
    "tiny-8": dict(stem=StemSpec(8, 3, 1), stages=(StageSpec(2, 8, 1), StageSpec(2, 16, 2))),
    "small-18": dict(
        stem=StemSpec(16, 3, 1),
        stages=(StageSpec(2, 16, 1), StageSpec(2, 32, 2), StageSpec(2, 64, 2), StageSpec(2, 128, 2)),
    ),
}


def preset(name: str, head: HeadSpec | None = None) -> NetworkSpec:
    """Named desk-scale layout; ``head`` defaults to a 3-way classifier."""
    try:
        layout = PRESETS[name]
    except KeyError:
        raise ConfigurationError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return NetworkSpec(name=name, head=head or HeadSpec(), **layout)


# --------------------------------------------------------------------- layers


class Conv2d:
    def __init__(self, cin, cout, kernel, stride=1, padding=0, bias=False, rng=None,
                 dtype=np.float32):
        self.stride, self.padding = stride, padding
        w = he_normal(rng, (cout, cin, kernel, kernel), cin * kernel * kernel, dtype)
        self.weight = Variable(w, requires_grad=True)
        self.bias = Variable(np.zeros(cout, dtype=dtype), requires_grad=True) if bias else None

    def __call__(self, x):
        return F.conv2d(x, self.weight, self.bias, self.stride, self.padding)

    def named_parameters(self, prefix):
        yield f"{prefix}.weight", self.weight
        if self.bias is not None:
            yield f"{prefix}.bias", self.bias


class BatchNorm2d:
    def __init__(self, channels, dtype=np.float32):
        self.state = BatchNormState.identity(channels, dtype=dtype)

    def __call__(self, x):
        return F.batch_norm(x, self.state)

    def named_parameters(self, prefix):
        yield f"{prefix}.weight", self.state.scale
        yield f"{prefix}.bias", self.state.shift

    def named_buffers(self, prefix):
        yield f"{prefix}.running_mean", self.state.running_mean
        yield f"{prefix}.running_var", self.state.running_var


class BasicBlock:
    """ReLU(bn2(conv2(ReLU(bn1(conv1 x)))) + shortcut(x))."""

    def __init__(self, spec: ResidualBlockSpec, rng, dtype=np.float32):
        self.spec = spec
        c_in, c_out, s = spec.in_channels, spec.out_channels, spec.stride
        self.conv1 = Conv2d(c_in, c_out, 3, s, 1, rng=rng, dtype=dtype)
        self.bn1 = BatchNorm2d(c_out, dtype)
        self.conv2 = Conv2d(c_out, c_out, 3, 1, 1, rng=rng, dtype=dtype)
        self.bn2 = BatchNorm2d(c_out, dtype)
        if spec.shortcut == "projection":
            self.proj = Conv2d(c_in, c_out, 1, s, 0, rng=rng, dtype=dtype)
            self.proj_bn = BatchNorm2d(c_out, dtype)
        else:
            self.proj = self.proj_bn = None
        self.active = True

    def residual(self, x):
        h = F.relu(self.bn1(self.conv1(x)))
        return self.bn2(self.conv2(h))

    def shortcut(self, x):
        if self.proj is None:
            return x
        return self.proj_bn(self.proj(x))

    def __call__(self, x):
        if not self.active:
            return x
        if x.ndim != 4 or x.shape[1] != self.spec.in_channels:
            raise ShapeError(
                f"block expects {self.spec.in_channels} input channels, got shape {x.shape}")
        return F.relu(F.add(self.residual(x), self.shortcut(x)))

    def _children(self):
        yield "conv1", self.conv1
        yield "bn1", self.bn1
        yield "conv2", self.conv2
        yield "bn2", self.bn2
        if self.proj is not None:
            yield "proj", self.proj
            yield "proj_bn", self.proj_bn

    def named_parameters(self, prefix):
        for name, layer in self._children():
            yield from layer.named_parameters(f"{prefix}.{name}")

    def named_buffers(self, prefix):
        for name, layer in self._children():
            if isinstance(layer, BatchNorm2d):
                yield from layer.named_buffers(f"{prefix}.{name}")

    def batch_norms(self):
        return [layer for _, layer in self._children() if isinstance(layer, BatchNorm2d)]


def block_forward(block: BasicBlock, x):
    return block(x)


class ClassifierHead:
    def __init__(self, in_features, outputs, rng, dtype=np.float32):
        w = he_normal(rng, (outputs, in_features), in_features, dtype)
        self.weight = Variable(w, requires_grad=True)
        self.bias = Variable(np.zeros(outputs, dtype=dtype), requires_grad=True)

    def __call__(self, features):
        return F.linear(F.global_avg_pool(features), self.weight, self.bias)

    def named_parameters(self, prefix):
        yield f"{prefix}.weight", self.weight
        yield f"{prefix}.bias", self.bias


class SegmentationHead:
    """1×1 score conv, then a stride-2 transposed conv initialized to bilinear."""

    def __init__(self, in_channels, outputs, rng, dtype=np.float32):
        self.score = Conv2d(in_channels, outputs, 1, bias=True, rng=rng, dtype=dtype)
        self.up_weight = Variable(bilinear_upsampling_kernel(outputs, 4, dtype), requires_grad=True)
        self.up_bias = Variable(np.zeros(outputs, dtype=dtype), requires_grad=True)

    def __call__(self, features):
        return self.score(features)

    def upsample(self, scores, out_h, out_w):
        up = F.conv_transpose2d(scores, self.up_weight, self.up_bias, stride=2, padding=1)
        return F.bilinear_resize(up, out_h, out_w)

    def named_parameters(self, prefix):
        yield from self.score.named_parameters(f"{prefix}.score")
        yield f"{prefix}.up.weight", self.up_weight
        yield f"{prefix}.up.bias", self.up_bias


# -------------------------------------------------------------------- network


class Network:
    """A built residual network.

    ``forward`` returns N×k logits for classifier heads and per-class score
    maps at feature resolution for segmentation heads; :meth:`score_logits`
    upsamples the latter to the input resolution.
    """

    def __init__(self, spec: NetworkSpec, seed: int = 0, dtype=np.float32,
                 zero_init_residual: bool = False):
        spec.validate()
        self.spec = spec
        self.seed = seed
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng((seed, 0))
        st = spec.stem
        self.stem_conv = Conv2d(spec.in_channels, st.channels, st.kernel, st.stride,
                                st.kernel // 2, rng=rng, dtype=dtype)
        self.stem_bn = BatchNorm2d(st.channels, dtype)
        self.stages = [[BasicBlock(b, rng, dtype) for b in stage] for stage in spec.block_specs()]
        if zero_init_residual:
            for block in self.blocks():
                block.bn2.state.scale.data[...] = 0
        self.head = self._make_head(spec.head, seed)
        self._training = True

    def _make_head(self, head: HeadSpec, seed):
        rng = np.random.default_rng((seed, 1))
        width = self.spec.stages[-1].width
        if head.kind == "classifier":
            return ClassifierHead(width, head.outputs, rng, self.dtype)
        return SegmentationHead(width, head.outputs, rng, self.dtype)

    # --- mode ---------------------------------------------------------------
    @property
    def training(self) -> bool:
        return self._training

    def train(self, mode: bool = True) -> "Network":
        self._training = bool(mode)
        for bn in self.batch_norms():
            bn.state.training = self._training
        return self

    def eval(self) -> "Network":
        return self.train(False)

    # --- structure ----------------------------------------------------------
    def blocks(self):
        for stage in self.stages:
            yield from stage

    def batch_norms(self):
        yield self.stem_bn
        for block in self.blocks():
            yield from block.batch_norms()

    @property
    def is_segmentation(self) -> bool:
        return self.spec.head.kind == "segmentation"

    @property
    def num_outputs(self) -> int:
        return self.spec.head.outputs

    @property
    def min_input_size(self) -> int:
        return self.spec.total_stride

    def named_parameters(self):
        out = {}
        items = list(self.stem_conv.named_parameters("stem.conv"))
        items += list(self.stem_bn.named_parameters("stem.bn"))
        for i, stage in enumerate(self.stages):
            for j, block in enumerate(stage):
                items += list(block.named_parameters(f"stages.{i}.{j}"))
        items += list(self.head.named_parameters("head"))
        for name, var in items:
            if name in out:
                raise ConfigurationError(f"duplicate parameter name {name}")
            out[name] = var
        return out

    def parameters(self):
        return list(self.named_parameters().values())

    def named_buffers(self):
        items = list(self.stem_bn.named_buffers("stem.bn"))
        for i, stage in enumerate(self.stages):
            for j, block in enumerate(stage):
                items += list(block.named_buffers(f"stages.{i}.{j}"))
        return dict(items)

    def state_dict(self) -> dict:
        """Copies of all parameter and running-statistic arrays, by name."""
        state = {k: v.data.copy() for k, v in self.named_parameters().items()}
        state.update({k: v.copy() for k, v in self.named_buffers().items()})
        return state

    def load_state_dict(self, state: dict, strict: bool = True) -> None:
        targets = {k: v.data for k, v in self.named_parameters().items()}
        targets.update(self.named_buffers())
        if strict:
            missing = sorted(set(targets) - set(state))
            extra = sorted(set(state) - set(targets))
            if missing or extra:
                raise ShapeError(f"state mismatch: missing {missing}, unexpected {extra}")
        for name, arr in state.items():
            if name not in targets:
                continue
            dst = targets[name]
            if dst.shape != np.shape(arr):
                raise ShapeError(
                    f"tensor {name!r}: expected shape {dst.shape}, got {np.shape(arr)}")
            dst[...] = arr

    def copy(self) -> "Network":
        return copy.deepcopy(self)

    # --- forward ------------------------------------------------------------
    def features(self, x):
        x = self._check_input(x)
        h = F.relu(self.stem_bn(self.stem_conv(x)))
        if self.spec.stem.pool:
            h = F.max_pool2d(h, 2)
        for block in self.blocks():
            h = block(h)
        return h

    def forward(self, x):
        return self.head(self.features(x))

    __call__ = forward

    def score_logits(self, x):
        """Per-pixel class logits at the input's spatial resolution."""
        if not self.is_segmentation:
            raise ConfigurationError("score_logits needs a segmentation head")
        x = self._check_input(x)
        scores = self.forward(x)
        return self.head.upsample(scores, x.shape[2], x.shape[3])

    def _check_input(self, x):
        if not isinstance(x, Variable):
            x = Variable(np.asarray(x, dtype=self.dtype))
        if x.ndim != 4 or x.shape[1] != self.spec.in_channels:
            raise ShapeError(
                f"network expects N×{self.spec.in_channels}×H×W input, got {x.shape}")
        m = self.min_input_size
        if x.shape[2] < m or x.shape[3] < m:
            raise ConfigurationError(
                f"input {x.shape[2]}x{x.shape[3]} is smaller than the minimum footprint {m}x{m}")
        return x


def build(spec: NetworkSpec, seed: int = 0, dtype=np.float32,
          zero_init_residual: bool = False) -> Network:
    """Deterministically initialized network for ``spec``.

    Backbone and head draw from separate streams derived from ``seed``, so a
    head rebuilt with the same seed matches a fresh build's head exactly.
    """
    return Network(spec, seed, dtype, zero_init_residual)


def replace_head(net: Network, k: int, seed: int) -> Network:
    """Copy of ``net`` with a freshly initialized k-way classifier head."""
    if net.is_segmentation:
        raise ConfigurationError("replace_head applies to classifier networks only")
    spec = net.spec.with_head(HeadSpec("classifier", k))
    new = net.copy()
    new.spec = spec
    new.head = new._make_head(spec.head, seed)
    return new


def drop_block(net: Network, stage: int, block: int) -> Network:
    """Copy of ``net`` in which one identity-shortcut block routes as identity."""
    try:
        target = net.stages[stage][block]
    except IndexError:
        raise ConfigurationError(f"no block at stage {stage}, index {block}") from None
    if target.spec.shortcut != "identity":
        raise ConfigurationError(
            f"block ({stage}, {block}) has a projection shortcut and cannot be dropped")
    new = net.copy()
    new.stages[stage][block].active = False
    return new


def active_blocks(net: Network) -> int:
    return sum(1 for b in net.blocks() if b.active)


def count_paths(spec: NetworkSpec) -> int:
    """Number of shortcut/through paths: 2 ** (identity-shortcut blocks)."""
    n = sum(1 for stage in spec.block_specs() for b in stage if b.shortcut == "identity")
    return 2 ** n
