import numpy as np
import pytest

from lesionkit.autodiff import Variable
from lesionkit.autodiff import functional as F
from lesionkit.exceptions import ConfigurationError, ShapeError
from lesionkit.resnet import (
    PRESETS,
    BasicBlock,
    HeadSpec,
    NetworkSpec,
    ResidualBlockSpec,
    StageSpec,
    StemSpec,
    active_blocks,
    build,
    count_paths,
    drop_block,
    preset,
    replace_head,
)

from conftest import toy_spec
from oracles import conv_oracle


def test_classifier_output_shapes(rng):
    x = rng.standard_normal((2, 3, 32, 32))
    assert build(toy_spec(3)).forward(x).shape == (2, 3)
    assert build(toy_spec(2)).forward(x).shape == (2, 2)


def test_same_seed_same_parameters():
    a, b = build(toy_spec(), seed=4).state_dict(), build(toy_spec(), seed=4).state_dict()
    assert a.keys() == b.keys()
    assert all(np.array_equal(a[k], b[k]) for k in a)
    c = build(toy_spec(), seed=5).state_dict()
    assert not np.array_equal(a["stem.conv.weight"], c["stem.conv.weight"])


def test_invalid_specs_rejected():
    with pytest.raises(ConfigurationError):
        toy_spec(k=4)
    with pytest.raises(ConfigurationError):
        NetworkSpec("x", StemSpec(8), (), HeadSpec())
    with pytest.raises(ConfigurationError):
        NetworkSpec("x", StemSpec(8), (StageSpec(0, 8),), HeadSpec())


def test_spec_roundtrip_dict():
    for name in PRESETS:
        spec = preset(name, HeadSpec("segmentation", 2))
        assert NetworkSpec.from_dict(spec.to_dict()) == spec


def test_input_validation(toy_net):
    with pytest.raises(ShapeError):
        toy_net.forward(np.zeros((1, 1, 8, 8)))
    net = build(preset("tiny-8"))
    with pytest.raises(ConfigurationError):
        net.forward(np.zeros((2, 3, 1, 1)))


# ------------------------------------------------------------ residual block


def _zero_branch_block(spec, dtype=np.float64):
    block = BasicBlock(spec, np.random.default_rng(0), dtype=dtype)
    block.bn2.state.scale.data[...] = 0
    return block


def test_zero_branch_identity_block(rng):
    block = _zero_branch_block(ResidualBlockSpec(4, 4, 1))
    x = np.abs(rng.standard_normal((2, 4, 5, 5)))
    np.testing.assert_array_equal(block(Variable(x)).data, x)


def test_zero_branch_projection_block(rng):
    block = _zero_branch_block(ResidualBlockSpec(3, 5, 2))
    x = rng.standard_normal((2, 3, 6, 6))
    expected = F.relu(block.proj_bn(block.proj(Variable(x)))).data
    np.testing.assert_array_equal(block(Variable(x)).data, expected)


def test_block_matches_composed_primitives(rng):
    block = BasicBlock(ResidualBlockSpec(3, 3, 1), rng, dtype=np.float64)
    for bn in block.batch_norms():
        bn.state.scale.data[...] = rng.uniform(0.5, 1.5, bn.state.scale.shape)
        bn.state.shift.data[...] = rng.standard_normal(bn.state.shift.shape)
    x = rng.standard_normal((2, 3, 5, 5))

    def bn(h, layer):
        mu = h.mean(axis=(0, 2, 3), keepdims=True)
        var = h.var(axis=(0, 2, 3), keepdims=True)
        s = layer.state
        return (h - mu) / np.sqrt(var + 1e-5) * s.scale.data[None, :, None, None] \
            + s.shift.data[None, :, None, None]

    h = np.maximum(bn(conv_oracle(x, block.conv1.weight.data, None, 1, 1), block.bn1), 0)
    h = bn(conv_oracle(h, block.conv2.weight.data, None, 1, 1), block.bn2)
    expected = np.maximum(h + x, 0)
    np.testing.assert_allclose(block(Variable(x)).data, expected, atol=1e-10)


def test_block_shortcut_kind():
    assert ResidualBlockSpec(8, 8, 1).shortcut == "identity"
    assert ResidualBlockSpec(8, 16, 1).shortcut == "projection"
    assert ResidualBlockSpec(8, 8, 2).shortcut == "projection"


# -------------------------------------------------------------- replace_head


def test_replace_head_preserves_backbone(toy_net, rng):
    new = replace_head(toy_net, 2, seed=9)
    old_state, new_state = toy_net.state_dict(), new.state_dict()
    for k, v in old_state.items():
        if not k.startswith("head."):
            np.testing.assert_array_equal(new_state[k], v)
    assert new.forward(rng.standard_normal((3, 3, 16, 16))).shape == (3, 2)
    assert toy_net.num_outputs == 3


def test_replace_head_matches_fresh_build():
    net = build(toy_spec(3), seed=2)
    replaced = replace_head(net, 3, seed=7)
    fresh = build(toy_spec(3), seed=7)
    np.testing.assert_array_equal(replaced.head.weight.data, fresh.head.weight.data)
    np.testing.assert_array_equal(replaced.head.bias.data, fresh.head.bias.data)


def test_replace_head_rejects_segmentation(seg_net):
    with pytest.raises(ConfigurationError):
        replace_head(seg_net, 2, 0)


# ---------------------------------------------------------------- drop_block


def test_drop_zero_branch_block_is_exact(rng):
    net = build(preset("tiny-8"), seed=3, zero_init_residual=True).eval()
    x = rng.standard_normal((2, 3, 16, 16)).astype(np.float32)
    before = net.forward(x).data
    for stage, block in ((0, 0), (0, 1), (1, 1)):
        dropped = drop_block(net, stage, block).eval()
        np.testing.assert_array_equal(dropped.forward(x).data, before)


def test_drop_equals_rebuild_without_block(rng):
    # trunk of 3 zero-branch blocks vs. the same weights with only 2 blocks
    three = build(toy_spec(blocks=3), seed=1, zero_init_residual=True)
    two = build(toy_spec(blocks=2), seed=1, zero_init_residual=True)
    dropped = drop_block(three, 0, 2)
    state3 = three.state_dict()
    two.load_state_dict({k: state3[k] for k in two.state_dict()})
    x = rng.standard_normal((2, 3, 8, 8)).astype(np.float32)
    np.testing.assert_array_equal(dropped.forward(x).data, two.forward(x).data)


def test_drop_block_bookkeeping(rng):
    net = build(preset("small-18"), seed=0)
    total = active_blocks(net)
    assert total == 8
    dropped = drop_block(net, 1, 1)
    assert active_blocks(dropped) == total - 1
    assert active_blocks(net) == total
    with pytest.raises(ConfigurationError):
        drop_block(net, 1, 0)  # projection shortcut
    with pytest.raises(ConfigurationError):
        drop_block(net, 9, 0)


def test_drop_block_on_trained_toy_stays_valid(rng):
    from lesionkit.trainer import AugmentConfig, ScheduleSpec, TrainConfig, fit

    net = build(toy_spec(2), seed=0)
    data = [(rng.random((8, 8, 3)), int(i % 2)) for i in range(8)]
    cfg = TrainConfig(batch_size=4, schedule=ScheduleSpec("fixed", 0.05, 2),
                      augment=AugmentConfig(crop_fraction=None, flip_prob=0))
    fit(net, data, cfg)
    x = rng.standard_normal((4, 3, 8, 8)).astype(np.float32)
    net.eval()
    dropped = drop_block(net, 0, 1).eval()
    a, b = net.forward(x).data, dropped.forward(x).data
    assert b.shape == (4, 2) and np.all(np.isfinite(b))
    assert not np.array_equal(a, b)


# ---------------------------------------------------------------- count_paths


@pytest.mark.parametrize("blocks", range(11))
def test_count_paths(blocks):
    if blocks == 0:
        # no residual blocks at all: a stage must exist, so use one projection block
        spec = NetworkSpec("p", StemSpec(8), (StageSpec(1, 16, 2),), HeadSpec())
    else:
        spec = toy_spec(blocks=blocks)
    assert count_paths(spec) == 2 ** blocks


def test_count_paths_presets():
    assert count_paths(preset("tiny-8")) == 2 ** 3
    assert count_paths(preset("small-18")) == 2 ** 5


# ------------------------------------------------------------- state handling


def test_load_state_dict_named_shape_error(toy_net):
    state = toy_net.state_dict()
    state["stem.conv.weight"] = np.zeros((1, 1, 1, 1), np.float32)
    with pytest.raises(ShapeError, match="stem.conv.weight"):
        toy_net.load_state_dict(state)


def test_copy_is_independent(toy_net):
    dup = toy_net.copy()
    dup.stem_conv.weight.data[...] = 0
    assert toy_net.stem_conv.weight.data.any()


def test_segmentation_score_logits_shape(seg_net, rng):
    x = rng.standard_normal((2, 3, 13, 17)).astype(np.float32)
    assert seg_net.score_logits(x).shape == (2, 2, 13, 17)
