"""Image quality metrics: PSNR and Gaussian-window SSIM.

Both operate on numpy arrays shaped [H, W] or [C, H, W], clamp inputs to
[0, peak], and compute in float64. Identical inputs give PSNR = +inf (the
documented sentinel) and SSIM = 1.0.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = ["psnr", "ssim"]

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _check(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"metric inputs differ in shape: {a.shape} vs {b.shape}")
    if a.ndim not in (2, 3):
        raise ValueError(f"metric inputs must be [H,W] or [C,H,W], got {a.shape}")


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """10 log10(peak^2 / MSE) in dB; +inf when the images are identical."""
    _check(a, b)
    a = np.clip(np.asarray(a, dtype=np.float64), 0.0, peak)
    b = np.clip(np.asarray(b, dtype=np.float64), 0.0, peak)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def _gaussian_kernel() -> np.ndarray:
    half = SSIM_WINDOW // 2
    g = np.exp(-0.5 * (np.arange(-half, half + 1) / SSIM_SIGMA) ** 2)
    g /= g.sum()
    return np.outer(g, g)


_KERNEL = _gaussian_kernel()


def _windowed_mean(img: np.ndarray) -> np.ndarray:
    win = sliding_window_view(img, (SSIM_WINDOW, SSIM_WINDOW))
    return np.tensordot(win, _KERNEL, axes=([2, 3], [0, 1]))


def _ssim_single(a: np.ndarray, b: np.ndarray, peak: float) -> float:
    c1 = (SSIM_K1 * peak) ** 2
    c2 = (SSIM_K2 * peak) ** 2
    mu_a = _windowed_mean(a)
    mu_b = _windowed_mean(b)
    var_a = _windowed_mean(a * a) - mu_a * mu_a
    var_b = _windowed_mean(b * b) - mu_b * mu_b
    cov = _windowed_mean(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def ssim(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """Mean structural similarity over valid 11x11 Gaussian windows
    (sigma 1.5, K1=0.01, K2=0.03); channels averaged."""
    _check(a, b)
    if a.shape[-1] < SSIM_WINDOW or a.shape[-2] < SSIM_WINDOW:
        raise ValueError(f"ssim needs extents >= {SSIM_WINDOW}, got {a.shape}")
    a = np.clip(np.asarray(a, dtype=np.float64), 0.0, peak)
    b = np.clip(np.asarray(b, dtype=np.float64), 0.0, peak)
    if a.ndim == 2:
        return _ssim_single(a, b, peak)
    return float(np.mean([_ssim_single(ac, bc, peak) for ac, bc in zip(a, b)]))
