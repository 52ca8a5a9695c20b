"""Synthetic clean images and Gaussian-noise pair synthesis.

Clean images are procedural mixtures of smooth gradients, flat shapes, and
band-limited texture, in [0, 1], shaped [3, S, S] float32. They are cheap,
deterministic given a seed, and carry enough structure (edges, flats,
texture) for a denoiser to learn on at desk scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

__all__ = [
    "SamplePair",
    "HOLDOUT_OFFSET",
    "make_clean_image",
    "make_clean_images",
    "synth_pair",
    "dihedral_transform",
    "random_crop",
    "pad_to_multiple",
]


@dataclass
class SamplePair:
    """clean/noisy in [0,1] domain, noisy = clean + N(0, sigma^2) unclamped;
    sigma is stored normalized (the 0-255 scale value divided by 255)."""

    clean: np.ndarray
    noisy: np.ndarray
    sigma: float


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def make_clean_image(seed, size: int) -> np.ndarray:
    rng = _rng(seed)
    yy, xx = np.meshgrid(np.linspace(0, 1, size), np.linspace(0, 1, size), indexing="ij")

    theta = rng.uniform(0, 2 * np.pi)
    ramp = np.cos(theta) * xx + np.sin(theta) * yy
    img = np.empty((3, size, size), dtype=np.float64)
    for ch in range(3):
        lo, hi = sorted(rng.uniform(0.1, 0.9, size=2))
        img[ch] = lo + (hi - lo) * ramp

    for _ in range(int(rng.integers(2, 7))):
        color = rng.uniform(0.05, 0.95, size=3)
        cy, cx = rng.uniform(0.1, 0.9, size=2) * size
        if rng.random() < 0.5:
            r = rng.uniform(0.06, 0.25) * size
            mask = (yy * size - cy) ** 2 + (xx * size - cx) ** 2 <= r * r
        else:
            hh, ww = rng.uniform(0.08, 0.4, size=2) * size
            mask = (np.abs(yy * size - cy) <= hh / 2) & (np.abs(xx * size - cx) <= ww / 2)
        alpha = rng.uniform(0.6, 1.0)
        img[:, mask] = (1 - alpha) * img[:, mask] + alpha * color[:, None]

    texture = gaussian_filter(rng.standard_normal((size, size)), sigma=rng.uniform(1.0, 4.0))
    peak = np.abs(texture).max()
    if peak > 0:
        img += rng.uniform(0.02, 0.08) * texture[None] / peak
    return np.clip(img, 0.0, 1.0).astype(np.float32)


HOLDOUT_OFFSET = 1_000_000  # keeps held-out image streams disjoint from training


def make_clean_images(seed: int, count: int, size: int, offset: int = 0) -> list[np.ndarray]:
    return [
        make_clean_image(np.random.default_rng([seed, offset + i]), size) for i in range(count)
    ]


def synth_pair(clean: np.ndarray, sigma: float, seed) -> SamplePair:
    """Add i.i.d. Gaussian noise with std sigma/255 (sigma on the 0-255
    scale). Deterministic given seed; the noisy array is not clamped."""
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    rng = _rng(seed)
    noise = rng.normal(0.0, sigma / 255.0, size=clean.shape).astype(clean.dtype)
    return SamplePair(clean=clean, noisy=clean + noise, sigma=sigma / 255.0)


def dihedral_transform(img: np.ndarray, k: int) -> np.ndarray:
    """The 8 flip/rotation symmetries of the square; k in [0, 8).
    k % 4 counts 90-degree rotations, k >= 4 adds a horizontal flip."""
    if not 0 <= k < 8:
        raise ValueError(f"dihedral index must be in [0, 8), got {k}")
    out = np.rot90(img, k % 4, axes=(-2, -1))
    if k >= 4:
        out = out[..., ::-1]
    return np.ascontiguousarray(out)


def random_crop(img: np.ndarray, side: int, rng: np.random.Generator) -> np.ndarray:
    h, w = img.shape[-2:]
    if h < side or w < side:
        img = pad_to_multiple(img, side)[0]
        h, w = img.shape[-2:]
    top = int(rng.integers(h - side + 1))
    left = int(rng.integers(w - side + 1))
    return img[..., top : top + side, left : left + side]


def pad_to_multiple(img: np.ndarray, m: int) -> tuple[np.ndarray, tuple[int, int]]:
    """Reflect-pad the two trailing axes up to multiples of m; returns the
    padded image and the original (H, W) for cropping back."""
    h, w = img.shape[-2:]
    ph = (-h) % m
    pw = (-w) % m
    if ph == 0 and pw == 0:
        return img, (h, w)
    pad = [(0, 0)] * (img.ndim - 2) + [(0, ph), (0, pw)]
    return np.pad(img, pad, mode="reflect"), (h, w)
