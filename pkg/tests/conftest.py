import numpy as np
import pytest

from sqhn.data import synth_generate
from sqhn.learning import LearnConfig, train_step
from sqhn.model import Architecture, LayerSpec, build


def train(state, xs, cfg=None):
    return [train_step(state, x, cfg or LearnConfig()) for x in xs]


def three_layer(shape=(1, 8, 8), J=32):
    return Architecture(shape, (LayerSpec((2, 2), J), LayerSpec((2, 2), J), LayerSpec((2, 2), J)))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def patterns():
    return synth_generate({"n": 16, "shape": (1, 8, 8), "seed": 5}).x.astype(float)


@pytest.fixture
def l1_trained(patterns):
    s = build(Architecture.single_layer((1, 8, 8), 16))
    train(s, patterns)
    return s


@pytest.fixture
def l3_trained(patterns):
    s = build(three_layer(J=16))
    train(s, patterns)
    return s
