"""Feed-forward / feedback sweeps and recall."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import tile, untile
from .model import ModelState, NodeActivations

EPS = 1e-12


class UntrainedModelError(RuntimeError):
    pass


@dataclass
class SweepResult:
    acts: NodeActivations
    used_fb: bool = False


def shifted_cosine(M, X, obs=None):
    """Mean-shifted cosine similarity rescaled to [0, 1].

    M: (n, d, J) memory vectors, X: (n, d) patches, obs: optional (n, d)
    boolean mask of observed dimensions. Unobserved dimensions are dropped
    from the inner product and both norms. A zero norm yields 0.5.
    """
    ms = M - 0.5
    xs = X - 0.5
    if obs is not None:
        ms = ms * obs[:, :, None]
        xs = xs * obs
    num = np.einsum("ndj,nd->nj", ms, xs)
    den = np.sqrt(np.einsum("ndj,ndj->nj", ms, ms)) * np.linalg.norm(xs, axis=1)[:, None]
    ok = den > EPS
    out = np.full(num.shape, 0.5)
    out[ok] = 0.5 * num[ok] / den[ok] + 0.5
    return np.clip(out, 0.0, 1.0)


def grown_mask(grown, J):
    return np.arange(J)[None, :] < np.asarray(grown)[:, None]


def masked_argmax(h, grown):
    """Argmax over each row's grown entries; lowest index wins ties."""
    h = np.where(grown_mask(grown, h.shape[1]), h, -np.inf)
    return np.argmax(h, axis=1)


def ff_bottom(patch, missing, M, grown):
    """Bottom-layer activations for a single node.

    patch: (d,), missing: (d,) bool or None, M: (d, J), grown: int.
    """
    obs = None if missing is None else ~np.asarray(missing, bool)[None]
    h = shifted_cosine(np.asarray(M, float)[None], np.asarray(patch, float)[None], obs)[0]
    h[grown:] = 0.0
    return h


def bottom_layer(state: ModelState, patches, obs):
    h = shifted_cosine(state.weights[0], patches, obs)
    h[~grown_mask(state.grown[0], h.shape[1])] = 0.0
    return h


def ff_hidden(child_acts, M, grown):
    """Hidden-node activations for a single node.

    child_acts: sequence of N child activation vectors (each of the child
    layer's width), M: (N * Jc, J) stacked child matrices, grown: int.
    Each child vector is reduced to its max entry, the result is projected
    through M and normalised by N times its Euclidean norm.
    """
    child_acts = np.asarray(child_acts, float)
    n, jc = child_acts.shape
    hmax = np.zeros_like(child_acts)
    k = np.argmax(child_acts, axis=1)
    hmax[np.arange(n), k] = child_acts[np.arange(n), k]
    v = hmax.reshape(-1)
    z = n * np.linalg.norm(v)
    h = np.zeros(M.shape[1])
    if z > 0:
        h = M.T @ v / z
    h[grown:] = 0.0
    return h


def hidden_layer(state: ModelState, l, child_win, child_val):
    """Vectorised hidden-layer feed-forward from child winners and their values.

    Equivalent to ``ff_hidden`` applied to every node, given that each
    child's max-activation vector is ``child_val`` at index ``child_win``.
    """
    arch = state.arch
    kids = arch.children[l]
    jc = arch.layers[l - 1].J
    W = state.weights[l]
    n, nk = kids.shape
    rows = np.arange(nk)[None, :] * jc + child_win[kids]
    vals = child_val[kids]
    gathered = W[np.arange(n)[:, None], rows]  # (n, nk, J)
    num = np.einsum("nkj,nk->nj", gathered, vals)
    z = nk * np.linalg.norm(vals, axis=1)
    h = np.zeros_like(num)
    ok = z > 0
    h[ok] = num[ok] / z[ok, None]
    h[~grown_mask(state.grown[l], h.shape[1])] = 0.0
    return h


def _prepare(state: ModelState, x, missing):
    kernel = state.arch.layers[0].kernel
    x = np.asarray(x, float)
    if x.shape != state.arch.input_shape:
        raise ValueError(f"pattern shape {x.shape} != model input {state.arch.input_shape}")
    patches = tile(x, kernel)
    obs = None if missing is None else ~tile(np.asarray(missing, bool), kernel)
    return patches, obs


def _require_trained(state: ModelState):
    if not state.is_trained():
        raise UntrainedModelError("model has nodes with no grown neurons")


def ff_sweep(state: ModelState, x, missing=None) -> SweepResult:
    """Bottom-up pass; stores each node's activations and its ff argmax."""
    _require_trained(state)
    arch = state.arch
    patches, obs = _prepare(state, x, missing)
    acts = NodeActivations.empty(arch)
    for l in range(arch.n_layers):
        if l == 0:
            h = bottom_layer(state, patches, obs)
        else:
            h = hidden_layer(state, l, acts.h_star[l - 1], acts.max_val[l - 1])
        win = masked_argmax(h, state.grown[l])
        acts.h[l] = h
        acts.h_star[l] = win
        acts.max_val[l] = h[np.arange(len(win)), win]
    return SweepResult(acts)


def prediction(state: ModelState, l, parent_star):
    """Top-down prediction M_{pa,l} h*_pa for every node of layer l (< root)."""
    arch = state.arch
    pa = arch.parent[l]
    J = arch.layers[l].J
    rows = arch.child_slot[l][:, None] * J + np.arange(J)[None, :]
    return state.weights[l + 1][pa[:, None], rows, parent_star[pa][:, None]]


def fb_sweep(state: ModelState, sweep: SweepResult, lam: float) -> NodeActivations:
    """Top-down pass: root takes its ff argmax, lower nodes mix ff and prediction."""
    arch = state.arch
    ff = sweep.acts
    out = NodeActivations(
        [h.copy() for h in ff.h], [s.copy() for s in ff.h_star], [m.copy() for m in ff.max_val]
    )
    for l in range(arch.n_layers - 2, -1, -1):
        mixed = lam * ff.h[l] + (1 - lam) * prediction(state, l, out.h_star[l + 1])
        win = masked_argmax(mixed, state.grown[l])
        out.h[l] = mixed
        out.h_star[l] = win
        out.max_val[l] = mixed[np.arange(len(win)), win]
    sweep.used_fb = True
    return out


def encode_ml(state: ModelState, x, missing=None) -> NodeActivations:
    """Bottom-up-only (max-likelihood) assignments, no growth."""
    return ff_sweep(state, x, missing).acts


def infer(state: ModelState, x, missing=None, lam=None) -> NodeActivations:
    lam = state.arch.lambda_fb if lam is None else lam
    return fb_sweep(state, ff_sweep(state, x, missing), lam)


def reconstruct(state: ModelState, acts: NodeActivations) -> np.ndarray:
    arch = state.arch
    hs = acts.h_star[0]
    cols = state.weights[0][np.arange(len(hs)), :, hs]
    return untile(cols, arch.layers[0].kernel, arch.input_shape)


def recall(state: ModelState, x, missing=None, lam=None, pass_observed=False) -> np.ndarray:
    """Reconstruct a (possibly corrupted) pattern from memory.

    With ``pass_observed`` the observed pixels are copied through and only
    the missing ones come from memory.
    """
    acts = infer(state, x, missing, lam)
    out = reconstruct(state, acts)
    if pass_observed and missing is not None:
        m = np.asarray(missing, bool)
        out = np.where(m, out, np.asarray(x, float))
    return out
