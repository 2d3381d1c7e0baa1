"""Dataset I/O, receptive-field tiling, synthetic patterns and stream ordering."""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

TENSOR_MAGIC = b"SQD1"
TENSOR_VERSION = 1
_HEADER = struct.Struct("<4sIIIII")


class DataFormatError(ValueError):
    pass


@dataclass
class PatternBatch:
    """N images of shape (C, H, W), values in [0, 1].

    ``labels`` groups items by class (OCI streams), ``domains`` by source
    (ODI streams). ``missing`` is an optional boolean mask of the same shape
    as ``x`` marking pixels that carry no information.
    """

    x: np.ndarray
    labels: np.ndarray | None = None
    domains: np.ndarray | None = None
    missing: np.ndarray | None = None

    def __post_init__(self):
        self.x = np.asarray(self.x)
        if self.x.ndim != 4:
            raise ValueError(f"expected (N, C, H, W) array, got shape {self.x.shape}")
        n = len(self.x)
        for name in ("labels", "domains"):
            v = getattr(self, name)
            if v is not None:
                v = np.asarray(v)
                if v.shape != (n,):
                    raise ValueError(f"{name} must have shape ({n},), got {v.shape}")
                setattr(self, name, v)
        if self.missing is not None:
            self.missing = np.asarray(self.missing, dtype=bool)
            if self.missing.shape != self.x.shape:
                raise ValueError("missing mask must match x")

    def __len__(self):
        return len(self.x)

    @property
    def shape(self):
        return tuple(self.x.shape[1:])

    def subset(self, idx) -> PatternBatch:
        idx = np.asarray(idx, dtype=np.int64)
        return PatternBatch(
            self.x[idx],
            None if self.labels is None else self.labels[idx],
            None if self.domains is None else self.domains[idx],
            None if self.missing is None else self.missing[idx],
        )

    @staticmethod
    def concat(batches) -> PatternBatch:
        batches = list(batches)
        if not batches:
            raise ValueError("nothing to concatenate")
        x = np.concatenate([b.x for b in batches])

        def cat(name):
            vals = [getattr(b, name) for b in batches]
            if all(v is None for v in vals):
                return None
            return np.concatenate(
                [np.zeros(len(b), np.int64) if v is None else v for b, v in zip(batches, vals)]
            )

        missing = None
        if any(b.missing is not None for b in batches):
            missing = np.concatenate(
                [np.zeros(b.x.shape, bool) if b.missing is None else b.missing for b in batches]
            )
        return PatternBatch(x, cat("labels"), cat("domains"), missing)


# ---------------------------------------------------------------- TensorFile


def save(batch: PatternBatch, path) -> None:
    """Write ``batch`` as a little-endian TensorFile (f32 values, optional u32 labels)."""
    x = np.asarray(batch.x)
    if x.size and (x.min() < 0 or x.max() > 1):
        raise DataFormatError("values must lie in [0, 1]")
    n, c, h, w = x.shape
    with open(path, "wb") as f:
        f.write(_HEADER.pack(TENSOR_MAGIC, TENSOR_VERSION, n, c, h, w))
        f.write(np.ascontiguousarray(x, dtype="<f4").tobytes())
        if batch.labels is not None:
            f.write(np.ascontiguousarray(batch.labels, dtype="<u4").tobytes())


def load(path) -> PatternBatch:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise DataFormatError(f"{path}: truncated header")
    magic, version, n, c, h, w = _HEADER.unpack_from(raw)
    if magic != TENSOR_MAGIC:
        raise DataFormatError(f"{path}: bad magic {magic!r}")
    if version != TENSOR_VERSION:
        raise DataFormatError(f"{path}: unsupported version {version}")
    count = n * c * h * w
    body = len(raw) - _HEADER.size
    if body == 4 * count:
        labels = None
    elif body == 4 * count + 4 * n:
        labels = np.frombuffer(raw, "<u4", n, _HEADER.size + 4 * count).copy()
    else:
        raise DataFormatError(f"{path}: payload of {body} bytes inconsistent with header")
    x = np.frombuffer(raw, "<f4", count, _HEADER.size).reshape(n, c, h, w).copy()
    if count and (x.min() < 0 or x.max() > 1):
        raise DataFormatError(f"{path}: values outside [0, 1]")
    return PatternBatch(x, labels)


def load_manifest(path) -> PatternBatch:
    """Load a CSV manifest with columns ``path,label,domain``.

    Each row names a TensorFile; every item in it receives the row's label
    (unless the file carries its own labels) and domain.
    """
    base = Path(path).parent
    batches = []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            b = load(base / row["path"])
            n = len(b)
            labels = b.labels
            if labels is None:
                labels = np.full(n, int(row.get("label") or 0), np.int64)
            domains = np.full(n, int(row.get("domain") or 0), np.int64)
            batches.append(PatternBatch(b.x, labels, domains))
    return PatternBatch.concat(batches)


def read_idx(path) -> np.ndarray:
    """Read an IDX (MNIST-family) file into a numpy array."""
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[0] != 0 or raw[1] != 0:
        raise DataFormatError(f"{path}: not an IDX file")
    dtypes = {0x08: ">u1", 0x09: ">i1", 0x0B: ">i2", 0x0C: ">i4", 0x0D: ">f4", 0x0E: ">f8"}
    if raw[2] not in dtypes:
        raise DataFormatError(f"{path}: unknown IDX type code {raw[2]:#x}")
    ndim = raw[3]
    dims = struct.unpack_from(">" + "I" * ndim, raw, 4)
    return np.frombuffer(raw, dtypes[raw[2]], offset=4 + 4 * ndim).reshape(dims)


def convert_array(x: np.ndarray, labels=None, scale: float | None = None) -> PatternBatch:
    """Coerce raw image arrays (N,H,W), (N,H,W,C) or (N,C,H,W) into a PatternBatch in [0, 1]."""
    x = np.asarray(x)
    if x.ndim == 3:
        x = x[:, None]
    elif x.ndim == 4 and x.shape[-1] in (1, 3, 4) and x.shape[1] not in (1, 3, 4):
        x = x.transpose(0, 3, 1, 2)
    elif x.ndim != 4:
        raise DataFormatError(f"cannot interpret array of shape {x.shape} as images")
    if scale is None:
        scale = 255.0 if np.issubdtype(x.dtype, np.integer) else 1.0
    x = np.clip(x.astype(np.float32) / np.float32(scale), 0, 1)
    return PatternBatch(x, None if labels is None else np.asarray(labels).astype(np.int64))


# ---------------------------------------------------------------- tiling


def _grid(shape, kernel):
    h, w = shape
    kh, kw = kernel
    if kh <= 0 or kw <= 0 or h % kh or w % kw:
        raise ValueError(f"kernel {kh}x{kw} does not evenly tile a {h}x{w} grid")
    return h // kh, w // kw


def tile(x: np.ndarray, kernel) -> np.ndarray:
    """Split a (C, H, W) image into non-overlapping patches.

    Returns an array of shape (n_nodes, C*kh*kw); nodes are in row-major
    grid order and each patch is flattened in (C, kh, kw) order.
    """
    c, h, w = x.shape
    kh, kw = kernel
    gh, gw = _grid((h, w), kernel)
    p = x.reshape(c, gh, kh, gw, kw).transpose(1, 3, 0, 2, 4)
    return p.reshape(gh * gw, c * kh * kw)


def untile(patches: np.ndarray, kernel, shape) -> np.ndarray:
    c, h, w = shape
    kh, kw = kernel
    gh, gw = _grid((h, w), kernel)
    p = np.asarray(patches).reshape(gh, gw, c, kh, kw).transpose(2, 0, 3, 1, 4)
    return p.reshape(c, h, w)


# ---------------------------------------------------------------- synthetic data


def dark(x):
    return x * 0.5


def bright_flip(x):
    return (-1 * x + 1) * 0.5 + 0.5


def flip(x):
    return 1 - x


DOMAIN_TRANSFORMS = {
    "identity": lambda x: x,
    "dark": dark,
    "bright_flip": bright_flip,
    "flip": flip,
}


@dataclass
class SynthSpec:
    """Recipe for a synthetic dataset.

    kind:
      ``random``    i.i.d. uniform pixels; in high dimension the mean-shifted
                    patterns are nearly orthogonal.
      ``binary``    i.i.d. Bernoulli(0.5) pixels.
      ``clustered`` ``n_classes`` uniform prototypes, each item a copy of its
                    class prototype with a fraction ``spread`` of pixels
                    resampled uniformly.
    ``domains`` lists transforms from DOMAIN_TRANSFORMS; the n items are
    split evenly between them.
    """

    n: int
    shape: tuple = (1, 8, 8)
    kind: str = "random"
    n_classes: int = 1
    spread: float = 0.3
    domains: list = field(default_factory=lambda: ["identity"])
    seed: int = 0


def synth_generate(spec: SynthSpec | dict) -> PatternBatch:
    if isinstance(spec, dict):
        spec = SynthSpec(**{**spec, "shape": tuple(spec.get("shape", (1, 8, 8)))})
    rng = np.random.default_rng(spec.seed)
    shape = tuple(spec.shape)
    n = int(spec.n)
    if n < 0:
        raise ValueError("n must be non-negative")
    labels = np.arange(n) % max(spec.n_classes, 1)
    if spec.kind == "random":
        x = rng.random((n, *shape))
    elif spec.kind == "binary":
        x = (rng.random((n, *shape)) < 0.5).astype(float)
    elif spec.kind == "clustered":
        protos = rng.random((spec.n_classes, *shape))
        x = protos[labels].copy()
        resample = rng.random((n, *shape)) < spec.spread
        x[resample] = rng.random(int(resample.sum()))
    else:
        raise ValueError(f"unknown synthetic kind {spec.kind!r}")
    ndom = len(spec.domains)
    domains = np.minimum(np.arange(n) * ndom // max(n, 1), ndom - 1)
    for d, name in enumerate(spec.domains):
        if name not in DOMAIN_TRANSFORMS:
            raise ValueError(f"unknown domain transform {name!r}")
        sel = domains == d
        x[sel] = DOMAIN_TRANSFORMS[name](x[sel])
    return PatternBatch(x.astype(np.float32), labels.astype(np.int64), domains.astype(np.int64))


# ---------------------------------------------------------------- streams


STREAM_MODES = ("iid", "oci", "odi")


def stream_order(batch: PatternBatch, mode: str = "iid", seed: int = 0) -> np.ndarray:
    """Return the presentation order (a permutation of item indices).

    ``iid`` shuffles globally; ``oci`` emits whole label blocks in ascending
    label order, shuffled within each block; ``odi`` does the same over
    domains, keeping domain order as given.
    """
    rng = np.random.default_rng(seed)
    n = len(batch)
    if mode == "iid":
        return rng.permutation(n)
    if mode == "oci":
        keys = batch.labels
    elif mode == "odi":
        keys = batch.domains
    else:
        raise ValueError(f"unknown stream order {mode!r}")
    if keys is None:
        raise ValueError(f"{mode} ordering requires {'labels' if mode == 'oci' else 'domains'}")
    order = []
    for k in np.unique(keys):
        idx = np.flatnonzero(keys == k)
        order.append(idx[rng.permutation(len(idx))])
    return np.concatenate(order) if order else np.zeros(0, np.int64)


def make_stream(batch: PatternBatch, mode: str = "iid", seed: int = 0) -> PatternBatch:
    return batch.subset(stream_order(batch, mode, seed))
