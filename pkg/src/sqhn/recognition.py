"""Episodic old/new recognition against a running-mean threshold at the memory node."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Judgement:
    old: bool
    score: float
    neuron: int
    value: float
    threshold: float


def update_mu(mu: float, c: int, value: float) -> float:
    """Online mean; ``c`` is the count *after* including ``value``."""
    if c < 1:
        raise ValueError("count must be >= 1")
    return (c - 1) / c * mu + value / c


def judge(state, x, missing=None, tol: float = 1e-9) -> Judgement:
    """Judge ``x`` old iff the root winner's activation exceeds its threshold.

    The comparison is ``value - mu > -tol``; ``tol`` absorbs round-off so a
    pattern reproducing its stored column exactly (value 1 vs mu 1) counts
    as old. ``tol=0`` gives the bare strict inequality.
    """
    from .inference import encode_ml

    acts = encode_ml(state, x, missing)
    root = state.root
    j = int(acts.h_star[root][0])
    v = float(acts.max_val[root][0])
    mu = float(state.mu[j])
    score = v - mu
    return Judgement(score > -tol, score, j, v, mu)


def judge_batch(state, xs, tol: float = 1e-9) -> np.ndarray:
    return np.array([judge(state, x, tol=tol).old for x in xs], bool)
