"""Checkpoint byte format, round trips, failure taxonomy."""

import struct

import numpy as np
import pytest

from ddt.checkpoint import (
    MAGIC,
    CheckpointData,
    CheckpointShapeError,
    CheckpointVersionError,
    CorruptCheckpointError,
    load_checkpoint,
    model_from_checkpoint,
    model_tensors,
    restore_model,
    save_checkpoint,
)
from ddt.network import build, toy_config
from ddt.tensor import constant


def make_ckpt(seed=0, iteration=17):
    model = build(toy_config(), seed=seed)
    # perturb so restored-vs-fresh is distinguishable
    rng = np.random.default_rng(99)
    for _, p in model.named_parameters():
        p.data = p.data + rng.normal(0, 0.01, size=p.shape).astype(p.data.dtype)
    return model, CheckpointData(
        config=toy_config(), tensors=model_tensors(model), iteration=iteration, seed=seed
    )


def test_round_trip_restores_forward_bit_exact(tmp_path):
    model, ckpt = make_ckpt()
    path = tmp_path / "a.ddt"
    save_checkpoint(path, ckpt)
    loaded = load_checkpoint(path)
    assert loaded.iteration == 17
    assert loaded.config == toy_config()
    restored = model_from_checkpoint(loaded)

    rng = np.random.default_rng(31)
    x = rng.uniform(0, 1, size=(1, 3, 32, 32)).astype(np.float32)
    np.testing.assert_array_equal(
        model(constant(x)).numpy(), restored(constant(x)).numpy()
    )


def test_round_trip_preserves_extra_tensors(tmp_path):
    _, ckpt = make_ckpt()
    ckpt.tensors["opt.m/conv_in.weight"] = np.full((3,), 0.5, dtype=np.float64)
    path = tmp_path / "b.ddt"
    save_checkpoint(path, ckpt)
    loaded = load_checkpoint(path)
    arr = loaded.tensors["opt.m/conv_in.weight"]
    assert arr.dtype == np.float64
    np.testing.assert_array_equal(arr, 0.5)


def test_save_is_deterministic(tmp_path):
    _, ckpt = make_ckpt()
    p1, p2 = tmp_path / "c1.ddt", tmp_path / "c2.ddt"
    save_checkpoint(p1, ckpt)
    save_checkpoint(p2, ckpt)
    assert p1.read_bytes() == p2.read_bytes()


def test_bad_magic(tmp_path):
    path = tmp_path / "bad.ddt"
    path.write_bytes(b"NOTACKPT" + b"\x00" * 32)
    with pytest.raises(CorruptCheckpointError):
        load_checkpoint(path)


def test_truncated_file(tmp_path):
    _, ckpt = make_ckpt()
    path = tmp_path / "t.ddt"
    save_checkpoint(path, ckpt)
    blob = path.read_bytes()
    for cut in (10, len(blob) // 2, len(blob) - 1):
        path.write_bytes(blob[:cut])
        with pytest.raises(CorruptCheckpointError):
            load_checkpoint(path)


def test_unknown_version(tmp_path):
    _, ckpt = make_ckpt()
    path = tmp_path / "v.ddt"
    save_checkpoint(path, ckpt)
    blob = bytearray(path.read_bytes())
    blob[8:12] = struct.pack("<I", 99)
    path.write_bytes(bytes(blob))
    with pytest.raises(CheckpointVersionError):
        load_checkpoint(path)


def test_magic_is_stable(tmp_path):
    _, ckpt = make_ckpt()
    path = tmp_path / "m.ddt"
    save_checkpoint(path, ckpt)
    assert path.read_bytes()[:8] == MAGIC == b"DDTCKPT\x00"


def test_trailing_garbage_detected(tmp_path):
    _, ckpt = make_ckpt()
    path = tmp_path / "g.ddt"
    save_checkpoint(path, ckpt)
    path.write_bytes(path.read_bytes() + b"xx")
    with pytest.raises(CorruptCheckpointError):
        load_checkpoint(path)


def test_restore_into_wrong_config(tmp_path):
    _, ckpt = make_ckpt()
    other = build(toy_config(base_channels=16), seed=0)
    with pytest.raises(CheckpointShapeError):
        restore_model(other, ckpt)


def test_restore_missing_tensor():
    model, ckpt = make_ckpt()
    key = next(iter(k for k in ckpt.tensors if k.startswith("model.")))
    del ckpt.tensors[key]
    with pytest.raises(CheckpointShapeError):
        restore_model(model, ckpt)


def test_unsupported_dtype_rejected(tmp_path):
    _, ckpt = make_ckpt()
    ckpt.tensors["bad"] = np.zeros(3, dtype=np.int32)
    with pytest.raises(ValueError):
        save_checkpoint(tmp_path / "x.ddt", ckpt)
