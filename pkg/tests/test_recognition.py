import numpy as np
import pytest

from conftest import three_layer, train
from sqhn.inference import UntrainedModelError
from sqhn.model import Architecture, build
from sqhn.recognition import judge, update_mu


def test_update_mu_arithmetic():
    mu = update_mu(0.0, 1, 0.8)
    assert mu == pytest.approx(0.8)
    assert update_mu(mu, 2, 0.6) == pytest.approx(0.7)
    assert update_mu(123.0, 1, 0.25) == 0.25
    with pytest.raises(ValueError):
        update_mu(0.0, 0, 0.5)


def test_update_mu_law_of_large_numbers(rng):
    vals = np.clip(rng.normal(0.9, 0.05, 1000), 0, 1)
    mu = 0.0
    for c, v in enumerate(vals, start=1):
        mu = update_mu(mu, c, v)
    assert mu == pytest.approx(vals.mean(), abs=1e-12)
    assert abs(mu - 0.9) < 3 * 0.05 / np.sqrt(1000)


def test_stored_patterns_judged_old(l1_trained, patterns):
    for x in patterns:
        j = judge(l1_trained, x)
        assert j.old
        assert j.value == pytest.approx(1.0)


def test_flipped_patterns_judged_new(l1_trained, patterns):
    for x in patterns:
        j = judge(l1_trained, 1 - x)
        assert not j.old
        assert j.score < -0.3


def test_boundary_is_strict_without_tolerance(l1_trained, patterns):
    s = l1_trained.copy()
    j = judge(s, patterns[0])
    s.mu[j.neuron] = j.value
    assert not judge(s, patterns[0], tol=0.0).old
    assert judge(s, patterns[0]).old  # default tolerance absorbs round-off


def test_judge_is_read_only(l1_trained, patterns, rng):
    before = l1_trained.copy()
    for x in rng.random((5, 1, 8, 8)):
        judge(l1_trained, x)
    assert l1_trained.equals(before)


def test_judge_requires_training(patterns):
    with pytest.raises(UntrainedModelError):
        judge(build(Architecture.single_layer((1, 8, 8), 4)), patterns[0])


def test_perfect_before_capacity():
    rng = np.random.default_rng(9)
    train_x = rng.random((32, 1, 12, 12))
    new_x = rng.random((32, 1, 12, 12))
    s = build(Architecture.single_layer((1, 12, 12), 32))
    train(s, train_x)
    assert all(judge(s, x).old for x in train_x)
    assert not any(judge(s, x).old for x in new_x)


def test_hidden_root_recognizes_before_capacity():
    rng = np.random.default_rng(3)
    s = build(three_layer(J=32))
    train_x = rng.random((24, 1, 8, 8))
    train(s, train_x)
    assert all(judge(s, x).old for x in train_x)
    assert not any(judge(s, x).old for x in 1 - train_x)
