import numpy as np
import pytest

from lesionkit.resnet import HeadSpec, NetworkSpec, StageSpec, StemSpec, build, preset


def toy_spec(k=3, kind="classifier", blocks=2):
    """Stem 3->8, one stage of ``blocks`` identity blocks."""
    return NetworkSpec("toy", StemSpec(8), (StageSpec(blocks, 8, 1),), HeadSpec(kind, k))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def toy_net():
    return build(toy_spec(), seed=0)


@pytest.fixture(scope="module")
def seg_net():
    return build(preset("tiny-8", HeadSpec("segmentation", 2)), seed=0)
