"""Gradient-check suite over every differentiable layer (64-bit)."""
from __future__ import annotations

import numpy as np

from .autodiff import functional as F
from .autodiff.engine import Variable
from .autodiff.gradcheck import grad_check
from .autodiff.state import BatchNormState
from .resnet import BasicBlock, ResidualBlockSpec

TOLERANCE = 1e-5
STEP = 1e-5


def _bn_op(training):
    def op(x, scale, shift):
        rng = np.random.default_rng(3)
        state = BatchNormState(scale, shift,
                               running_mean=rng.standard_normal(x.shape[1]),
                               running_var=rng.uniform(0.5, 2.0, x.shape[1]),
                               training=training)
        return F.batch_norm(x, state)
    return op


def _block_op(spec, seed):
    block = BasicBlock(spec, np.random.default_rng(seed), dtype=np.float64)
    names = [name for name, _ in block.named_parameters("b")]

    def op(x, *params):
        for (name, _), p in zip(block.named_parameters("b"), params):
            owner, attr = _locate(block, name)
            setattr(owner, attr, p)
        return block(x)

    initial = [v.data.copy() for _, v in block.named_parameters("b")]
    return op, initial, names


def _locate(block, name):
    # "b.conv1.weight" -> (block.conv1, "weight"); batch norm params live on its state
    _, layer, attr = name.split(".")
    obj = getattr(block, layer)
    if hasattr(obj, "state"):
        return obj.state, {"weight": "scale", "bias": "shift"}[attr]
    return obj, attr


def away_from_kink(x, step=STEP):
    """Push values so |x| > 10 * step, keeping their signs."""
    x = np.asarray(x, dtype=np.float64)
    sign = np.where(x >= 0, 1.0, -1.0)
    return sign * (np.abs(x) + 20 * step)


def cases(seed=0):
    """``name -> (op, inputs)`` pairs covering the layer library."""
    r = np.random.default_rng(seed)
    out = {}
    out["conv2d"] = (lambda x, w, b: F.conv2d(x, w, b, stride=1, padding=1),
                     [r.standard_normal((2, 3, 5, 5)), r.standard_normal((4, 3, 3, 3)),
                      r.standard_normal(4)])
    out["conv2d_stride2"] = (lambda x, w: F.conv2d(x, w, stride=2, padding=1),
                             [r.standard_normal((2, 2, 6, 5)), r.standard_normal((3, 2, 3, 3))])
    out["transposed_conv2d"] = (lambda x, w, b: F.conv_transpose2d(x, w, b, stride=2, padding=1),
                                [r.standard_normal((2, 3, 3, 4)), r.standard_normal((3, 2, 4, 4)),
                                 r.standard_normal(2)])
    out["batch_norm_train"] = (_bn_op(True), [r.standard_normal((3, 2, 3, 3)),
                                              r.standard_normal(2), r.standard_normal(2)])
    out["batch_norm_inference"] = (_bn_op(False), [r.standard_normal((3, 2, 3, 3)),
                                                   r.standard_normal(2), r.standard_normal(2)])
    out["relu"] = (F.relu, [away_from_kink(r.standard_normal((3, 4)))])
    out["linear"] = (F.linear, [r.standard_normal((3, 4)), r.standard_normal((5, 4)),
                                r.standard_normal(5)])
    labels = r.integers(0, 3, 4)
    out["softmax_cross_entropy"] = (lambda z: F.cross_entropy(z, labels),
                                    [r.standard_normal((4, 3))])
    pixel_labels = r.integers(0, 2, (2, 3, 3))
    out["pixel_cross_entropy"] = (lambda z: F.cross_entropy(z, pixel_labels),
                                  [r.standard_normal((2, 2, 3, 3))])
    out["softmax"] = (F.softmax, [r.standard_normal((3, 4))])
    out["sigmoid"] = (F.sigmoid, [r.standard_normal((3, 4))])
    out["bilinear_resize_up"] = (lambda x: F.bilinear_resize(x, 7, 9),
                                 [r.standard_normal((1, 2, 4, 5))])
    out["bilinear_resize_down"] = (lambda x: F.bilinear_resize(x, 3, 2),
                                   [r.standard_normal((1, 2, 7, 5))])
    out["max_pool2d"] = (lambda x: F.max_pool2d(x, 2), [r.standard_normal((2, 2, 4, 4))])
    out["global_avg_pool"] = (F.global_avg_pool, [r.standard_normal((2, 3, 3, 3))])
    out["flip"] = (lambda x: F.flip(x, "both"), [r.standard_normal((1, 2, 3, 4))])
    for name, spec in (("residual_block_identity", ResidualBlockSpec(3, 3, 1)),
                       ("residual_block_projection", ResidualBlockSpec(2, 3, 2))):
        op, params, _ = _block_op(spec, seed)
        # offset keeps the final ReLU input away from its kink
        x = r.standard_normal((2, spec.in_channels, 4, 4)) + 3.0
        out[name] = (op, [x] + params)
    return out


def run_suite(seed=0, step=STEP, names=None) -> dict:
    """Max relative gradient error per case."""
    results = {}
    for name, (op, inputs) in cases(seed).items():
        if names is not None and name not in names:
            continue
        results[name] = grad_check(op, inputs, step=step, seed=seed)
    return results
