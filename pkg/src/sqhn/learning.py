"""Online learning: max-likelihood assignment with neuron growth and local column updates."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .data import tile
from .inference import EPS, bottom_layer, hidden_layer
from .model import ModelState, NodeActivations, energy, one_hot_blocks
from .recognition import update_mu

GROWTH_MODES = ("dirichlet", "constant", "disabled")
LR_MODES = ("count", "constant")
THRESHOLD_FORMS = ("supp", "main")


@dataclass
class LearnConfig:
    """Learning switches. ``alpha``/``gamma_grow`` of None defer to the architecture.

    The non-default modes exist for ablations: ``growth_mode="constant"``
    uses a fixed threshold ``eps0``; ``"disabled"`` starts every node fully
    grown with random columns; ``lr_mode="constant"`` uses step ``eta``
    everywhere; ``averaging=False`` only ever writes freshly grown columns.
    """

    alpha: float | None = None
    gamma_grow: float | None = None
    growth_mode: str = "dirichlet"
    threshold_form: str = "supp"
    eps0: float = 0.5
    lr_mode: str = "count"
    eta: float = 0.1
    averaging: bool = True
    fixed_latent: bool = False
    frozen_layers: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.growth_mode not in GROWTH_MODES:
            raise ValueError(f"growth_mode must be one of {GROWTH_MODES}")
        if self.lr_mode not in LR_MODES:
            raise ValueError(f"lr_mode must be one of {LR_MODES}")
        if self.threshold_form not in THRESHOLD_FORMS:
            raise ValueError(f"threshold_form must be one of {THRESHOLD_FORMS}")
        if self.alpha is not None and self.alpha <= 0:
            raise ValueError("alpha must be > 0")
        if self.gamma_grow is not None and not 0 < self.gamma_grow <= 1:
            raise ValueError("gamma_grow must lie in (0, 1]")
        if not 0 < self.eta <= 1:
            raise ValueError("eta must lie in (0, 1]")

    def to_dict(self):
        return asdict(self)


@dataclass
class StepSummary:
    t: int
    assignments: list
    grew: list
    saturated: list
    root_value: float
    energy: float

    def to_dict(self):
        return {
            "t": self.t,
            "root": int(self.assignments[-1][0]),
            "root_value": self.root_value,
            "grew": [int(g.sum()) for g in self.grew],
            "saturated": [int(s.sum()) for s in self.saturated],
            "energy": self.energy,
        }


@dataclass
class StreamLog:
    steps: list = field(default_factory=list)
    records: list = field(default_factory=list)


def growth_threshold(t, alpha, gamma_grow=1.0, form="supp"):
    """Activation below which a node grows a new neuron at iteration ``t``."""
    if form == "supp":
        return gamma_grow * alpha / (t + 1 + alpha)
    if form == "main":
        return alpha / (t + alpha)
    raise ValueError(f"unknown threshold form {form!r}")


def randomize(state: ModelState, rng) -> None:
    """Fill every node with J random columns (uniform pixels, Dirichlet(1) child blocks).

    Each random column counts as one prior observation, so later count-based
    updates blend with it instead of overwriting it.
    """
    arch = state.arch
    for l, layer in enumerate(arch.layers):
        n, d, J = state.weights[l].shape
        if l == 0:
            state.weights[l][:] = rng.random((n, d, J))
        else:
            k = d // arch.layers[l - 1].J
            blocks = rng.dirichlet(np.ones(arch.layers[l - 1].J), size=(n, k, J))
            state.weights[l][:] = blocks.transpose(0, 1, 3, 2).reshape(n, d, J)
        state.grown[l][:] = J
        state.counts[l][:] = 1


def _threshold(state: ModelState, cfg: LearnConfig, l):
    arch = state.arch
    if cfg.growth_mode == "constant":
        return cfg.eps0
    alpha = arch.alpha if cfg.alpha is None else cfg.alpha
    gamma = arch.layer_gamma(l) if cfg.gamma_grow is None else cfg.gamma_grow
    return growth_threshold(state.t, alpha, gamma, cfg.threshold_form)


def _fresh_value(state: ModelState, l, patches, acts: NodeActivations):
    """Activation of a neuron whose column equals the current input to each node of layer ``l``."""
    if l == 0:
        c = patches - 0.5
        return np.where(np.linalg.norm(c, axis=1) > EPS, 1.0, 0.5)
    vals = acts.max_val[l - 1][state.arch.children[l]]
    z = vals.shape[1] * np.linalg.norm(vals, axis=1)
    return np.divide(vals.sum(axis=1), z, out=np.zeros(len(z)), where=z > 0)


def assign(state: ModelState, x, cfg: LearnConfig, pinned=None):
    """Bottom-up assignment with growth. Mutates ``state.grown`` only.

    Returns (acts, grew, saturated).
    """
    arch = state.arch
    patches = tile(np.asarray(x, float), arch.layers[0].kernel)
    acts = NodeActivations.empty(arch)
    grew, saturated = [], []
    for l, layer in enumerate(arch.layers):
        if l == 0:
            h = bottom_layer(state, patches, None)
        else:
            h = hidden_layer(state, l, acts.h_star[l - 1], acts.max_val[l - 1])
        g = state.grown[l]
        n = len(g)
        live = np.arange(layer.J)[None, :] < g[:, None]
        hm = np.where(live, h, -np.inf)
        best = np.argmax(hm, axis=1)
        best_val = hm[np.arange(n), best]
        if pinned is not None:
            win = np.asarray(pinned[l], np.int64)
            val = h[np.arange(n), win]
            grow = np.zeros(n, bool)
            sat = np.zeros(n, bool)
        else:
            can_grow = cfg.growth_mode != "disabled" and l >= cfg.frozen_layers
            below = best_val < _threshold(state, cfg, l)
            grow = below & (g < layer.J) & can_grow
            sat = below & (g >= layer.J) & can_grow
            win = np.where(grow, g, best)
            # a fresh neuron takes the value it will have once its column holds this input
            val = np.where(grow, _fresh_value(state, l, patches, acts), best_val)
            if (g[~grow] == 0).any():
                raise RuntimeError(f"layer {l} has empty nodes that cannot grow")
            state.grown[l] = g + grow
        acts.h[l] = h
        acts.h_star[l] = win
        acts.max_val[l] = val
        grew.append(grow)
        saturated.append(sat)
    return acts, grew, saturated


def update(state: ModelState, x, acts: NodeActivations, grew, cfg: LearnConfig) -> None:
    """Move each assigned column toward the observed child value; bump counts."""
    arch = state.arch
    patches = tile(np.asarray(x, float), arch.layers[0].kernel)
    for l in range(cfg.frozen_layers, arch.n_layers):
        W = state.weights[l]
        n = W.shape[0]
        win = acts.h_star[l]
        if l == 0:
            target = patches
        else:
            target = one_hot_blocks(acts.h_star[l - 1][arch.children[l]], arch.layers[l - 1].J)
        c = state.counts[l][np.arange(n), win]
        step = 1.0 / (c + 1) if cfg.lr_mode == "count" else np.full(n, cfg.eta)
        if not cfg.averaging:
            step = np.where(grew[l], step, 0.0)
        col = W[np.arange(n), :, win]
        W[np.arange(n), :, win] = col + step[:, None] * (target - col)
        state.counts[l][np.arange(n), win] += 1


def train_step(state: ModelState, x, cfg: LearnConfig | None = None, pinned=None) -> StepSummary:
    """One online iteration: assign (growing if needed), update, bookkeeping.

    ``pinned`` (a list of per-layer winner arrays) replaces inference, which
    is how SQHN+ keeps every sample of an item on one latent code.
    """
    cfg = cfg or LearnConfig()
    if cfg.growth_mode == "disabled" and not state.is_trained():
        randomize(state, np.random.default_rng(cfg.seed))
    acts, grew, saturated = assign(state, x, cfg, pinned)
    e = energy(state, acts, x)
    update(state, x, acts, grew, cfg)
    root = state.root
    j = int(acts.h_star[root][0])
    v = float(acts.max_val[root][0])
    state.mu[j] = update_mu(state.mu[j], int(state.counts[root][0, j]), v)
    summary = StepSummary(state.t, acts.h_star, grew, saturated, v, e)
    state.t += 1
    return summary


def train_stream(state: ModelState, stream, cfg: LearnConfig | None = None, hooks=(), items=None) -> StreamLog:
    """Present ``stream`` (iterable of (C,H,W) arrays) once, in order.

    ``items`` optionally tags each element with an item id; with
    ``cfg.fixed_latent`` the first sample's assignments are reused for the
    rest of that item's samples. Each hook is called as
    ``hook(step_index, state, summary)``; non-None results are collected.
    """
    cfg = cfg or LearnConfig()
    log = StreamLog()
    pins = {}
    for i, x in enumerate(stream):
        item = None if items is None else items[i]
        pinned = pins.get(item) if (cfg.fixed_latent and item is not None) else None
        summary = train_step(state, x, cfg, pinned)
        if cfg.fixed_latent and item is not None and item not in pins:
            pins[item] = [a.copy() for a in summary.assignments]
        log.steps.append(summary)
        for hook in hooks:
            rec = hook(i, state, summary)
            if rec is not None:
                log.records.append(rec)
    return log
