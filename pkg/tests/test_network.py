"""End-to-end network: shape pyramid, identity init, determinism."""

import numpy as np
import pytest

from ddt.network import NetworkConfig, build, toy_config
from ddt.tensor import ShapeMismatchError, constant


def test_toy_forward_shape(toy_model):
    x = constant(np.zeros((1, 3, 32, 32), dtype=np.float32))
    assert toy_model(x).shape == (1, 3, 32, 32)


def test_identity_at_init(toy_model):
    # conv_out starts at zero, so the residual is exactly zero
    rng = np.random.default_rng(30)
    x = rng.uniform(0, 1, size=(1, 3, 32, 32)).astype(np.float32)
    out = toy_model(constant(x)).numpy()
    np.testing.assert_array_equal(out, x)


def test_same_seed_is_bit_identical():
    cfg = toy_config()
    a = build(cfg, seed=7)
    b = build(cfg, seed=7)
    pa = dict(a.named_parameters())
    pb = dict(b.named_parameters())
    assert pa.keys() == pb.keys()
    for k in pa:
        np.testing.assert_array_equal(pa[k].numpy(), pb[k].numpy())


def test_different_seed_differs():
    cfg = toy_config()
    a = build(cfg, seed=0)
    b = build(cfg, seed=1)
    diffs = sum(
        not np.array_equal(pa.numpy(), pb.numpy())
        for (_, pa), (_, pb) in zip(a.named_parameters(), b.named_parameters())
    )
    assert diffs > 0


def test_trace_pyramid(toy_model):
    x = constant(np.zeros((1, 3, 64, 64), dtype=np.float32))
    trace = {}
    toy_model(x, trace=trace)
    c0 = toy_model.config.base_channels
    assert trace["enc0"] == (1, c0, 64, 64)
    assert trace["enc1"] == (1, 2 * c0, 32, 32)
    assert trace["enc2"] == (1, 4 * c0, 16, 16)
    assert trace["bottleneck"] == (1, 8 * c0, 8, 8)
    assert trace["dec2"] == (1, 4 * c0, 16, 16)
    assert trace["dec1"] == (1, 2 * c0, 32, 32)
    assert trace["dec0"] == (1, c0, 64, 64)
    assert trace["refine"] == (1, c0, 64, 64)


def test_divisor_and_input_validation(toy_model):
    assert toy_model.config.divisor == 32
    with pytest.raises(ShapeMismatchError) as exc:
        toy_model(constant(np.zeros((1, 3, 40, 40), dtype=np.float32)))
    assert "divisible" in str(exc.value)
    with pytest.raises(ShapeMismatchError):
        toy_model(constant(np.zeros((1, 1, 32, 32), dtype=np.float32)))


def test_divisor_tracks_patch_sides():
    cfg = NetworkConfig(p_local=8, p_global=12)
    assert cfg.divisor == 8 * 24
    assert toy_config(p_local=4, p_global=4).divisor == 32


def test_network_config_validation():
    with pytest.raises(ValueError):
        NetworkConfig(encoder_blocks=(4, 6)).validate()
    with pytest.raises(ValueError):
        NetworkConfig(heads=(1, 2, 4)).validate()
    with pytest.raises(ValueError):
        NetworkConfig(base_channels=6, heads=(4, 4, 4, 4)).validate()
    with pytest.raises(ValueError):
        NetworkConfig(branch="wide").validate()
    with pytest.raises(ValueError):
        NetworkConfig(dtype="f16").validate()
    NetworkConfig().validate()


def test_level_channels():
    cfg = NetworkConfig(base_channels=32)
    assert [cfg.channels(i) for i in range(4)] == [32, 64, 128, 256]
    bc = cfg.block_config(2)
    assert bc.channels == 128 and bc.heads == cfg.heads[2]


def test_nonfinite_input_completes_forward():
    # a diverged forward must still run to completion so the training loop
    # can see the non-finite loss and fail cleanly, not crash mid-gather
    x = np.zeros((1, 3, 32, 32), dtype=np.float32)
    x[0, 0, 0, 0] = np.nan
    model = build(toy_config(), seed=0)
    out = model(constant(x)).numpy()
    assert out.shape == (1, 3, 32, 32)
    assert np.isnan(out).any()
