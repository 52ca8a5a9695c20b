"""Synthetic data pipeline: images, noise, augmentation, padding."""

import math

import numpy as np
import pytest

from ddt.data import (
    HOLDOUT_OFFSET,
    dihedral_transform,
    make_clean_image,
    make_clean_images,
    pad_to_multiple,
    random_crop,
    synth_pair,
)


def test_clean_image_contract():
    img = make_clean_image(0, 64)
    assert img.shape == (3, 64, 64)
    assert img.dtype == np.float32
    assert img.min() >= 0.0 and img.max() <= 1.0
    # not degenerate: some structure in every channel
    assert all(img[c].std() > 0.01 for c in range(3))


def test_clean_image_deterministic():
    np.testing.assert_array_equal(make_clean_image(7, 32), make_clean_image(7, 32))
    assert not np.array_equal(make_clean_image(7, 32), make_clean_image(8, 32))


def test_make_clean_images_streams_disjoint():
    imgs = make_clean_images(0, 3, 32)
    held = make_clean_images(0, 3, 32, offset=HOLDOUT_OFFSET)
    for a in imgs:
        for b in held:
            assert not np.array_equal(a, b)


def test_synth_pair_zero_sigma():
    clean = make_clean_image(1, 32)
    pair = synth_pair(clean, 0.0, seed=0)
    np.testing.assert_array_equal(pair.noisy, clean)
    assert pair.sigma == 0.0


def test_synth_pair_noise_statistics():
    clean = np.full((3, 256, 256), 0.5, dtype=np.float32)
    pair = synth_pair(clean, 25.0, seed=3)
    noise = pair.noisy - clean
    assert abs(noise.std() - 25.0 / 255.0) / (25.0 / 255.0) < 0.02
    assert abs(float(noise.mean())) < 1e-3
    assert pair.noisy.dtype == np.float32


def test_synth_pair_deterministic_and_unclamped():
    clean = make_clean_image(2, 32)
    a = synth_pair(clean, 50.0, seed=9)
    b = synth_pair(clean, 50.0, seed=9)
    np.testing.assert_array_equal(a.noisy, b.noisy)
    assert synth_pair(np.ones((3, 64, 64), np.float32), 50.0, seed=1).noisy.max() > 1.0


def test_synth_pair_rejects_negative_sigma():
    with pytest.raises(ValueError):
        synth_pair(make_clean_image(0, 32), -1.0, seed=0)


def test_dihedral_group_properties():
    img = make_clean_image(3, 16)
    seen = []
    for k in range(8):
        t = dihedral_transform(img, k)
        assert t.shape == img.shape
        # rearrangement only: the multiset of values is untouched
        assert math.fsum(t.ravel().tolist()) == math.fsum(img.ravel().tolist())
        seen.append(t)
    # all eight variants distinct for a generic image
    for i in range(8):
        for j in range(i + 1, 8):
            assert not np.array_equal(seen[i], seen[j])
    np.testing.assert_array_equal(dihedral_transform(img, 0), img)


def test_dihedral_rotation_matches_numpy():
    img = make_clean_image(4, 8)
    np.testing.assert_array_equal(
        dihedral_transform(img, 1), np.rot90(img, 1, axes=(-2, -1))
    )


def test_dihedral_rejects_bad_index():
    with pytest.raises(ValueError):
        dihedral_transform(make_clean_image(0, 8), 8)


def test_random_crop_extent_and_membership():
    rng = np.random.default_rng(70)
    img = make_clean_image(5, 64)
    crop = random_crop(img, 32, rng)
    assert crop.shape == (3, 32, 32)
    # determinism under a fixed generator state
    crop2 = random_crop(img, 32, np.random.default_rng(70))
    np.testing.assert_array_equal(crop, crop2)


def test_random_crop_pads_small_images():
    rng = np.random.default_rng(71)
    img = make_clean_image(6, 16)
    crop = random_crop(img, 32, rng)
    assert crop.shape == (3, 32, 32)


def test_pad_to_multiple():
    img = make_clean_image(7, 48)
    padded, (h, w) = pad_to_multiple(img, 32)
    assert (h, w) == (48, 48)
    assert padded.shape == (3, 64, 64)
    np.testing.assert_array_equal(padded[:, :48, :48], img)
    # reflection, not zeros
    np.testing.assert_array_equal(padded[:, 48, :48], img[:, 46, :])

    same, _ = pad_to_multiple(img, 16)
    assert same.shape == img.shape
