"""Tree architecture, learned state, energy and checkpoints."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .data import _grid, tile

CHECKPOINT_MAGIC = b"SQHN"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class LayerSpec:
    """One hidden layer: each node sees a ``kernel`` block of the layer below
    (pixels for the bottom layer, nodes otherwise) and owns up to ``J`` neurons."""

    kernel: tuple
    J: int
    gamma_grow: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "kernel", tuple(int(k) for k in self.kernel))
        if self.J < 1:
            raise ValueError("J must be >= 1")


@dataclass(frozen=True)
class Architecture:
    input_shape: tuple
    layers: tuple
    alpha: float = 1e9
    gamma_grow: float = 1.0
    lambda_fb: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        layers = tuple(l if isinstance(l, LayerSpec) else LayerSpec(**l) for l in self.layers)
        object.__setattr__(self, "layers", layers)
        if len(self.input_shape) != 3:
            raise ValueError("input_shape must be (C, H, W)")
        if not layers:
            raise ValueError("at least one layer is required")
        if self.alpha <= 0:
            raise ValueError("alpha must be > 0")
        if not 0 < self.gamma_grow <= 1:
            raise ValueError("gamma_grow must lie in (0, 1]")
        if not 0 <= self.lambda_fb <= 1:
            raise ValueError("lambda_fb must lie in [0, 1]")
        grid = self.input_shape[1:]
        for i, layer in enumerate(layers):
            grid = _grid(grid, layer.kernel)
        if grid != (1, 1):
            raise ValueError(f"top layer has a {grid[0]}x{grid[1]} grid; a single root node is required")

    @classmethod
    def single_layer(cls, input_shape, J, **kw) -> Architecture:
        """One hidden (memory) node whose receptive field is the whole image."""
        return cls(input_shape, (LayerSpec(tuple(input_shape[1:]), J),), **kw)

    @classmethod
    def from_dict(cls, d) -> Architecture:
        d = dict(d)
        d["layers"] = tuple(LayerSpec(**l) if isinstance(l, dict) else l for l in d["layers"])
        return cls(**d)

    def to_dict(self):
        return {
            "input_shape": list(self.input_shape),
            "layers": [
                {"kernel": list(l.kernel), "J": l.J, "gamma_grow": l.gamma_grow} for l in self.layers
            ],
            "alpha": self.alpha,
            "gamma_grow": self.gamma_grow,
            "lambda_fb": self.lambda_fb,
        }

    @property
    def n_layers(self):
        return len(self.layers)

    @cached_property
    def grids(self):
        out, grid = [], self.input_shape[1:]
        for layer in self.layers:
            grid = _grid(grid, layer.kernel)
            out.append(grid)
        return out

    @cached_property
    def n_nodes(self):
        return [gh * gw for gh, gw in self.grids]

    @cached_property
    def children(self):
        """children[l] is an (n_nodes[l], kh*kw) index array into layer l-1 (None for l=0)."""
        out = [None]
        for l in range(1, self.n_layers):
            gh, gw = self.grids[l]
            kh, kw = self.layers[l].kernel
            pw = self.grids[l - 1][1]
            r, c = np.meshgrid(np.arange(gh), np.arange(gw), indexing="ij")
            i, j = np.meshgrid(np.arange(kh), np.arange(kw), indexing="ij")
            rows = r.reshape(-1, 1) * kh + i.reshape(1, -1)
            cols = c.reshape(-1, 1) * kw + j.reshape(1, -1)
            out.append(rows * pw + cols)
        return out

    @cached_property
    def parent(self):
        """parent[l] maps each node of layer l to its node index in layer l+1 (None at the root)."""
        out = []
        for l in range(self.n_layers - 1):
            p = np.empty(self.n_nodes[l], np.int64)
            for node, kids in enumerate(self.children[l + 1]):
                p[kids] = node
            out.append(p)
        out.append(None)
        return out

    @cached_property
    def child_slot(self):
        """child_slot[l][i] is the position of node i among its parent's children."""
        out = []
        for l in range(self.n_layers - 1):
            s = np.empty(self.n_nodes[l], np.int64)
            for kids in self.children[l + 1]:
                s[kids] = np.arange(len(kids))
            out.append(s)
        out.append(None)
        return out

    def child_dim(self, l):
        """Rows of each node's stacked weight matrix at layer l."""
        if l == 0:
            kh, kw = self.layers[0].kernel
            return self.input_shape[0] * kh * kw
        kh, kw = self.layers[l].kernel
        return kh * kw * self.layers[l - 1].J

    def layer_gamma(self, l):
        g = self.layers[l].gamma_grow
        return self.gamma_grow if g is None else g


@dataclass
class ModelState:
    """Mutable learned parameters.

    ``weights[l]`` has shape (n_nodes, child_dim, J): column j of node n is the
    memory vector of neuron j. For l > 0 the rows are the concatenation of the
    per-child blocks, each of length J of the layer below.
    """

    arch: Architecture
    weights: list
    counts: list
    grown: list
    mu: np.ndarray
    t: int = 0

    def copy(self) -> ModelState:
        return ModelState(
            self.arch,
            [w.copy() for w in self.weights],
            [c.copy() for c in self.counts],
            [g.copy() for g in self.grown],
            self.mu.copy(),
            self.t,
        )

    @property
    def root(self):
        return self.arch.n_layers - 1

    def is_trained(self):
        return all(int(g.min()) > 0 for g in self.grown)

    def equals(self, other: ModelState) -> bool:
        return (
            self.arch == other.arch
            and self.t == other.t
            and np.array_equal(self.mu, other.mu)
            and all(np.array_equal(a, b) for a, b in zip(self.weights, other.weights))
            and all(np.array_equal(a, b) for a, b in zip(self.counts, other.counts))
            and all(np.array_equal(a, b) for a, b in zip(self.grown, other.grown))
        )


@dataclass
class NodeActivations:
    """Per-layer activations ``h`` (n_nodes, J), winners ``h_star`` (n_nodes,)
    and winning values ``max_val`` (n_nodes,). ``h_star == -1`` means unassigned."""

    h: list
    h_star: list
    max_val: list = field(default_factory=list)

    @classmethod
    def empty(cls, arch: Architecture) -> NodeActivations:
        return cls(
            [np.zeros((n, layer.J)) for n, layer in zip(arch.n_nodes, arch.layers)],
            [np.full(n, -1, np.int64) for n in arch.n_nodes],
            [np.zeros(n) for n in arch.n_nodes],
        )


def build(arch: Architecture) -> ModelState:
    return ModelState(
        arch,
        [np.zeros((n, arch.child_dim(l), layer.J)) for l, (n, layer) in enumerate(zip(arch.n_nodes, arch.layers))],
        [np.zeros((n, layer.J), np.int64) for n, layer in zip(arch.n_nodes, arch.layers)],
        [np.zeros(n, np.int64) for n in arch.n_nodes],
        np.zeros(arch.layers[-1].J),
    )


def one_hot_blocks(h_star_children: np.ndarray, J: int) -> np.ndarray:
    """Concatenated one-hots for a (n_nodes, n_children) array of child winners."""
    n, k = h_star_children.shape
    out = np.zeros((n, k, J))
    np.put_along_axis(out, h_star_children[..., None], 1.0, axis=2)
    return out.reshape(n, k * J)


def energy_terms(state: ModelState, acts: NodeActivations, x: np.ndarray, missing=None) -> np.ndarray:
    """Conditional-probability terms of every non-root node, visible patches first."""
    from .inference import shifted_cosine

    arch = state.arch
    for l, hs in enumerate(acts.h_star):
        if hs.shape != (arch.n_nodes[l],) or (hs < 0).any():
            raise ValueError(f"layer {l} has unassigned nodes")
    patches = tile(np.asarray(x, float), arch.layers[0].kernel)
    obs = None if missing is None else ~tile(np.asarray(missing, bool), arch.layers[0].kernel)
    w0 = state.weights[0]
    hs0 = acts.h_star[0]
    cols = w0[np.arange(len(hs0)), :, hs0]
    terms = [shifted_cosine(cols[:, :, None], patches, obs)[:, 0]]
    for l in range(arch.n_layers - 1):
        # entry M_{pa,l}[h*_l, h*_pa]
        pa = arch.parent[l]
        row = arch.child_slot[l] * arch.layers[l].J + acts.h_star[l]
        terms.append(state.weights[l + 1][pa, row, acts.h_star[l + 1][pa]])
    return np.concatenate(terms)


def energy(state: ModelState, acts: NodeActivations, x: np.ndarray, missing=None) -> float:
    """Mean conditional probability over all non-root nodes (the root carries no prior)."""
    return float(energy_terms(state, acts, x, missing).mean())


# ---------------------------------------------------------------- checkpoints

_ARCH_HEAD = struct.Struct("<IIIIddd")
_LAYER = struct.Struct("<IIId")


def _pack_arch(arch: Architecture) -> bytes:
    out = [_ARCH_HEAD.pack(*arch.input_shape, arch.n_layers, arch.alpha, arch.gamma_grow, arch.lambda_fb)]
    for layer in arch.layers:
        g = np.nan if layer.gamma_grow is None else layer.gamma_grow
        out.append(_LAYER.pack(*layer.kernel, layer.J, g))
    return b"".join(out)


def save_checkpoint(state: ModelState, path) -> None:
    """Binary little-endian checkpoint; values are written at full (f64) precision."""
    arch = state.arch
    parts = [CHECKPOINT_MAGIC, struct.pack("<I", CHECKPOINT_VERSION), _pack_arch(arch)]
    for l in range(arch.n_layers):
        parts.append(np.ascontiguousarray(state.weights[l], "<f8").tobytes())
        parts.append(np.ascontiguousarray(state.counts[l], "<u8").tobytes())
        parts.append(np.ascontiguousarray(state.grown[l], "<u4").tobytes())
    parts.append(np.ascontiguousarray(state.mu, "<f8").tobytes())
    parts.append(struct.pack("<Q", state.t))
    with open(path, "wb") as f:
        f.write(b"".join(parts))


def load_checkpoint(path) -> ModelState:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not an SQHN checkpoint")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    off = 8
    c, h, w, n_layers, alpha, gamma, lam = _ARCH_HEAD.unpack_from(raw, off)
    off += _ARCH_HEAD.size
    layers = []
    for _ in range(n_layers):
        kh, kw, J, g = _LAYER.unpack_from(raw, off)
        off += _LAYER.size
        layers.append(LayerSpec((kh, kw), J, None if np.isnan(g) else g))
    arch = Architecture((c, h, w), tuple(layers), alpha, gamma, lam)
    state = build(arch)

    def take(dtype, shape):
        nonlocal off
        count = int(np.prod(shape))
        a = np.frombuffer(raw, dtype, count, off).reshape(shape)
        off += a.nbytes
        return a

    for l in range(n_layers):
        state.weights[l] = take("<f8", state.weights[l].shape).astype(np.float64)
        state.counts[l] = take("<u8", state.counts[l].shape).astype(np.int64)
        state.grown[l] = take("<u4", state.grown[l].shape).astype(np.int64)
    state.mu = take("<f8", state.mu.shape).astype(np.float64)
    (state.t,) = struct.unpack_from("<Q", raw, off)
    off += 8
    if off != len(raw):
        raise ValueError(f"{path}: {len(raw) - off} trailing bytes")
    return state
