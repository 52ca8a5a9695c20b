"""PSNR and SSIM behavior."""

import math

import numpy as np
import pytest

from ddt.metrics import psnr, ssim


def test_psnr_known_offset():
    rng = np.random.default_rng(50)
    a = rng.uniform(0.0, 0.9, size=(3, 64, 64))
    b = a + 10.0 / 255.0  # stays inside [0, 1], no clamping distortion
    expect = 20.0 * math.log10(255.0 / 10.0)
    assert psnr(a, b) == pytest.approx(expect, abs=1e-9)


def test_psnr_identical_is_infinite():
    a = np.full((3, 8, 8), 0.3)
    assert psnr(a, a) == math.inf


def test_psnr_clamps_before_scoring():
    a = np.zeros((8, 8))
    b = np.full((8, 8), -5.0)  # clamps to 0 -> identical
    assert psnr(a, b) == math.inf


def test_psnr_shape_error():
    with pytest.raises(ValueError):
        psnr(np.zeros((8, 8)), np.zeros((8, 9)))


def test_psnr_monotone_in_noise():
    rng = np.random.default_rng(51)
    a = rng.uniform(0.2, 0.8, size=(3, 64, 64))
    vals = [psnr(a, a + s * rng.normal(size=a.shape)) for s in (0.01, 0.05, 0.1)]
    assert vals[0] > vals[1] > vals[2]


def test_ssim_identical_is_one():
    rng = np.random.default_rng(52)
    a = rng.uniform(0, 1, size=(32, 32))
    assert ssim(a, a) == pytest.approx(1.0, abs=1e-9)


def test_ssim_inverted_binary_is_negative():
    rng = np.random.default_rng(53)
    a = (rng.uniform(0, 1, size=(32, 32)) > 0.5).astype(np.float64)
    assert ssim(a, 1.0 - a) < 0.0


def test_ssim_degrades_with_noise():
    rng = np.random.default_rng(54)
    a = rng.uniform(0.2, 0.8, size=(48, 48))
    s1 = ssim(a, np.clip(a + 0.02 * rng.normal(size=a.shape), 0, 1))
    s2 = ssim(a, np.clip(a + 0.2 * rng.normal(size=a.shape), 0, 1))
    assert 1.0 > s1 > s2


def test_ssim_channel_mean():
    rng = np.random.default_rng(55)
    a = rng.uniform(0, 1, size=(3, 32, 32))
    b = np.clip(a + 0.05 * rng.normal(size=a.shape), 0, 1)
    per_channel = [ssim(a[c], b[c]) for c in range(3)]
    assert ssim(a, b) == pytest.approx(np.mean(per_channel), abs=1e-12)


def test_ssim_window_too_large():
    with pytest.raises(ValueError):
        ssim(np.zeros((8, 8)), np.zeros((8, 8)))  # smaller than the 11x11 window


def test_ssim_shape_error():
    with pytest.raises(ValueError):
        ssim(np.zeros((32, 32)), np.zeros((32, 31)))
