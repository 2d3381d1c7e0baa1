"""Recall/recognition measures and the forgetting-law Monte-Carlo oracle."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

RECALL_GAMMA = 0.01


def recall_mse(x, x_new, missing=None) -> float:
    """MSE over all pixels, or over the missing ones only when a mask is given."""
    err = (np.asarray(x, float) - np.asarray(x_new, float)) ** 2
    if missing is not None:
        m = np.asarray(missing, bool)
        if m.any():
            return float(err[m].mean())
    return float(err.mean())


def recall_accuracy(mses, gamma=RECALL_GAMMA) -> float:
    mses = np.asarray(mses, float)
    if mses.size == 0:
        return 0.0
    return float((mses < gamma).mean())


def cumulative(series) -> float:
    series = np.asarray(series, float)
    return float(series.mean()) if series.size else 0.0


def order_sensitivity(c_oncont, c_on) -> float:
    return abs(c_oncont - c_on)


@dataclass
class ForgettingCurve:
    t: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    theory: np.ndarray
    max_dev: float
    max_dev_in_se: float

    def accuracy_theory(self, J):
        return theoretical_accuracy(J, self.t)

    def to_dict(self):
        return {
            "t": self.t.tolist(),
            "mean": self.mean.tolist(),
            "stderr": self.stderr.tolist(),
            "theory": self.theory.tolist(),
            "max_dev": self.max_dev,
            "max_dev_in_se": self.max_dev_in_se,
        }


def theoretical_intact(J, t):
    return J * np.exp(-np.asarray(t, float) / J)


def theoretical_accuracy(J, t):
    t = np.asarray(t, float)
    return J * np.exp(-t / J) / (J + t)


def forgetting_oracle(J, T, trials, rng, process="discrete") -> ForgettingCurve:
    """Simulate the worst-case overwrite process past capacity.

    Start with J columns each holding one datum; new data land on uniformly
    chosen columns. Tracks the number of single-datum columns for t = 0..T
    over ``trials`` independent runs.

    ``process="discrete"`` writes exactly one datum per step, so the exact
    mean is J (1 - 1/J)^t. ``process="poisson"`` lets data arrive as a unit-rate
    Poisson stream, whose exact mean is J e^{-t/J}.
    """
    t = np.arange(T + 1)
    if process == "discrete":
        choices = rng.integers(0, J, size=(trials, T))
        intact = np.empty((trials, T + 1))
        for r in range(trials):
            hit = np.zeros(J, bool)
            count = J
            intact[r, 0] = J
            for s, j in enumerate(choices[r]):
                if not hit[j]:
                    hit[j] = True
                    count -= 1
                intact[r, s + 1] = count
    elif process == "poisson":
        first_hit = rng.exponential(J, size=(trials, J))
        intact = (first_hit[:, :, None] > t[None, None, :]).sum(axis=1).astype(float)
    else:
        raise ValueError(f"unknown process {process!r}")
    mean = intact.mean(axis=0)
    se = intact.std(axis=0, ddof=1) / np.sqrt(trials) if trials > 1 else np.zeros(T + 1)
    theory = theoretical_intact(J, t)
    dev = np.abs(mean - theory)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, dev / se, np.where(dev > 0, np.inf, 0.0))
    return ForgettingCurve(t, mean, se, theory, float(dev.max()), float(z.max()))


def exact_intact_discrete(J, t):
    return J * (1 - 1 / J) ** np.asarray(t, float)
