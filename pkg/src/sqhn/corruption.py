"""Seeded corruption and sampling protocols.

Every generator takes a (C, H, W) pattern in [0, 1] and a numpy Generator
and returns ``(corrupted, missing)`` where ``missing`` is a boolean mask of
the same shape. Only ``pixel_dropout`` and ``right_mask`` declare pixels
missing; everything else corrupts values and returns an empty mask.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

KINDS = (
    "none",
    "white_noise",
    "gaussian_sample",
    "pixel_dropout",
    "right_mask",
    "occlusion",
    "binary_sample",
)
FILLS = ("black", "color", "noise")


@dataclass(frozen=True)
class Corruption:
    kind: str = "none"
    var: float = 0.0
    frac: float | None = None
    fill: str = "black"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown corruption {self.kind!r}")
        if self.frac is not None and not 0 <= self.frac <= 1:
            raise ValueError("frac must lie in [0, 1]")
        if self.var < 0:
            raise ValueError("var must be >= 0")
        if self.fill not in FILLS:
            raise ValueError(f"fill must be one of {FILLS}")
        if self.kind in ("pixel_dropout", "right_mask") and self.frac is None:
            raise ValueError(f"{self.kind} requires frac")

    @property
    def hetero(self):
        return self.kind in ("pixel_dropout", "right_mask")

    @classmethod
    def from_dict(cls, d) -> Corruption:
        return cls(**d)

    def to_dict(self):
        return asdict(self)


def white_noise(x, var, rng):
    noise = rng.normal(0.0, math.sqrt(var), x.shape) if var > 0 else 0.0
    return np.clip(x + noise, 0, 1), np.zeros(x.shape, bool)


def pixel_dropout(x, frac, rng):
    c, h, w = x.shape
    k = math.ceil(frac * h * w)
    pix = np.zeros(h * w, bool)
    pix[rng.choice(h * w, size=k, replace=False)] = True
    missing = np.broadcast_to(pix.reshape(1, h, w), x.shape).copy()
    return np.where(missing, 0.0, x), missing


def right_mask(x, frac, rng=None):
    c, h, w = x.shape
    k = math.ceil(frac * w)
    missing = np.zeros(x.shape, bool)
    if k:
        missing[:, :, w - k :] = True
    return np.where(missing, 0.0, x), missing


def occlusion_box(shape, rng, frac=None):
    """Sample (top, left, height, width) of an occluding rectangle.

    Without ``frac`` the sides are uniform on 1..H and 1..W. With ``frac``
    the width is drawn so the rectangle covers about that fraction of the image.
    """
    _, h, w = shape
    if frac is None:
        bh = int(rng.integers(1, h + 1))
        bw = int(rng.integers(1, w + 1))
    else:
        area = frac * h * w
        if area <= 0:
            return 0, 0, 0, 0
        lo = max(1, math.ceil(area / h))
        bw = int(rng.integers(lo, w + 1))
        bh = min(h, max(1, round(area / bw)))
    top = int(rng.integers(0, h - bh + 1))
    left = int(rng.integers(0, w - bw + 1))
    return top, left, bh, bw


def occlusion(x, fill, rng, frac=None):
    top, left, bh, bw = occlusion_box(x.shape, rng, frac)
    out = x.copy()
    region = (slice(None), slice(top, top + bh), slice(left, left + bw))
    if fill == "black":
        out[region] = 0.0
    elif fill == "color":
        out[region] = rng.random(x.shape[0])[:, None, None]
    else:
        out[region] = np.clip(rng.normal(0.0, 1.0, out[region].shape), 0, 1)
    return out, np.zeros(x.shape, bool)


def binary_sample(x, rng):
    return (rng.random(x.shape) < x).astype(float), np.zeros(x.shape, bool)


def apply(x, corruption: Corruption, rng):
    x = np.asarray(x, float)
    k = corruption.kind
    if k == "none":
        return x.copy(), np.zeros(x.shape, bool)
    if k in ("white_noise", "gaussian_sample"):
        return white_noise(x, corruption.var, rng)
    if k == "pixel_dropout":
        return pixel_dropout(x, corruption.frac, rng)
    if k == "right_mask":
        return right_mask(x, corruption.frac)
    if k == "occlusion":
        return occlusion(x, corruption.fill, rng, corruption.frac)
    return binary_sample(x, rng)
