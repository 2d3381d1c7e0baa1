"""Batch-stored modern Hopfield network used as a recall baseline."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SIMILARITIES = ("dot", "manhattan", "cosine")


@dataclass(frozen=True)
class MemoryMatrix:
    M: np.ndarray  # (d, K), one stored pattern per column
    shape: tuple
    beta: float = 10000.0
    similarity: str = "dot"

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if self.similarity not in SIMILARITIES:
            raise ValueError(f"similarity must be one of {SIMILARITIES}")

    @property
    def K(self):
        return self.M.shape[1]


def store_batch(patterns, beta=10000.0, similarity="dot", shape=None) -> MemoryMatrix:
    patterns = np.asarray(patterns, float)
    if shape is None:
        shape = patterns.shape[1:] if len(patterns) else ()
    if len(patterns):
        M = patterns.reshape(len(patterns), -1).T.copy()
    else:
        M = np.zeros((int(np.prod(shape)) if shape else 0, 0))
    return MemoryMatrix(M, tuple(shape), beta, similarity)


def scores(mem: MemoryMatrix, x, missing=None) -> np.ndarray:
    M = mem.M
    x = np.asarray(x, float).reshape(-1)
    if missing is not None:
        obs = ~np.asarray(missing, bool).reshape(-1)
        M, x = M[obs], x[obs]
    if mem.similarity == "dot":
        return M.T @ x
    if mem.similarity == "manhattan":
        return -np.abs(M - x[:, None]).sum(axis=0)
    norms = np.linalg.norm(M, axis=0) * np.linalg.norm(x)
    return np.divide(M.T @ x, norms, out=np.zeros(M.shape[1]), where=norms > 0)


def softmax(z):
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def recall_mhn(mem: MemoryMatrix, x, missing=None) -> np.ndarray:
    """x_new = M softmax(beta * sim(M, x)), similarities over observed pixels only."""
    if mem.K == 0:
        raise ValueError("memory is empty")
    p = softmax(mem.beta * scores(mem, x, missing))
    return (mem.M @ p).reshape(mem.shape)
