import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sqhn.metrics import (
    cumulative,
    exact_intact_discrete,
    forgetting_oracle,
    order_sensitivity,
    recall_accuracy,
    recall_mse,
    theoretical_accuracy,
)


def test_recall_mse():
    x = np.zeros((1, 4, 4))
    assert recall_mse(x, x) == 0
    assert recall_mse(x, np.ones_like(x)) == 1
    y = x.copy()
    y[0, :2] = 0.2
    assert recall_mse(x, y) == pytest.approx(0.02)
    missing = np.zeros_like(x, bool)
    missing[0, :2] = True
    assert recall_mse(x, y, missing) == pytest.approx(0.04)


def test_recall_accuracy():
    assert recall_accuracy([0.001, 0.0]) == 1
    assert recall_accuracy([0.5, 0.2]) == 0
    assert recall_accuracy([0.005, 0.02], 0.01) == 0.5


@given(st.lists(st.floats(0, 1), min_size=1, max_size=30), st.floats(0, 1), st.floats(0, 1))
def test_accuracy_monotone_in_gamma(mses, g1, g2):
    lo, hi = sorted((g1, g2))
    assert recall_accuracy(mses, lo) <= recall_accuracy(mses, hi)


@given(st.lists(st.floats(0, 1), min_size=1, max_size=30))
def test_cumulative_is_mean(series):
    assert cumulative(series) == pytest.approx(np.mean(series))


def test_cumulative_and_sensitivity():
    assert cumulative([0.3] * 5) == pytest.approx(0.3)
    assert cumulative([0, 1]) == 0.5
    assert order_sensitivity(0.2, 0.2) == 0
    assert order_sensitivity(0.3, 0.1) == pytest.approx(0.2)


def test_forgetting_oracle_start():
    for process in ("discrete", "poisson"):
        curve = forgetting_oracle(100, 50, 50, np.random.default_rng(0), process)
        assert curve.mean[0] == 100 and curve.stderr[0] == 0
    assert theoretical_accuracy(100, 0) == 1.0
    with pytest.raises(ValueError):
        forgetting_oracle(10, 5, 5, np.random.default_rng(0), "bursty")


def test_poisson_oracle_matches_exponential_law():
    curve = forgetting_oracle(100, 300, 1000, np.random.default_rng(0), "poisson")
    dev = np.abs(curve.mean - curve.theory)
    assert np.all(dev[1:] <= 3 * curve.stderr[1:])


def test_forgetting_oracle_matches_exact_expectation():
    # E[I(t)] = J (1 - 1/J)^t exactly for the uniform overwrite process
    J = 20
    curve = forgetting_oracle(J, 60, 4000, np.random.default_rng(1))
    exact = exact_intact_discrete(J, curve.t)
    assert np.all(np.abs(curve.mean - exact) <= 4 * curve.stderr + 1e-12)
