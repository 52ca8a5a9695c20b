"""Checkpoint file format (version 1).

Layout, byte-exact:

    offset  size  content
    0       8     magic b"DDTCKPT\\x00"
    8       4     format version, uint32 little-endian (currently 1)
    12      8     header length L, uint64 little-endian
    20      L     UTF-8 JSON header
    20+L    ...   tensor payloads, raw little-endian, concatenated

The JSON header is an object with keys "config" (the network config as a
flat object), "iteration" (int), "seed" (int), and "tensors": a list of
{"name", "dtype" ("f32"|"f64"), "shape", "offset", "nbytes"} with offsets
relative to the start of the payload region. The file length must equal
20 + L + sum(nbytes); anything else is reported as corruption.

Distinct failure kinds raise distinct exceptions: CorruptCheckpointError
(bad magic, unreadable header, truncation, inconsistent manifest),
CheckpointVersionError (format version unknown), CheckpointShapeError
(tensor set incompatible with the target model).
"""

from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .network import DenoiseNet, NetworkConfig, build

__all__ = [
    "CheckpointError",
    "CorruptCheckpointError",
    "CheckpointVersionError",
    "CheckpointShapeError",
    "CheckpointData",
    "save_checkpoint",
    "load_checkpoint",
    "restore_model",
    "model_from_checkpoint",
]

MAGIC = b"DDTCKPT\x00"
VERSION = 1

_DTYPE_TO_NAME = {np.dtype(np.float32): "f32", np.dtype(np.float64): "f64"}
_NAME_TO_DTYPE = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}


class CheckpointError(Exception):
    pass


class CorruptCheckpointError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError):
    pass


@dataclass
class CheckpointData:
    """Everything needed to resume: config, tensors (model parameters under
    "model.<name>", optimizer moments under "opt.m/<name>" and
    "opt.v/<name>"), the iteration counter, and the run seed."""

    config: NetworkConfig
    tensors: dict[str, np.ndarray]
    iteration: int = 0
    seed: int = 0


def save_checkpoint(path, ckpt: CheckpointData) -> None:
    entries = []
    payloads = []
    offset = 0
    for name, arr in ckpt.tensors.items():
        dt = _DTYPE_TO_NAME.get(np.dtype(arr.dtype))
        if dt is None:
            raise ValueError(f"tensor {name!r} has unsupported dtype {arr.dtype}")
        raw = np.ascontiguousarray(arr).astype(_NAME_TO_DTYPE[dt], copy=False).tobytes()
        entries.append(
            {"name": name, "dtype": dt, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)}
        )
        payloads.append(raw)
        offset += len(raw)
    header = json.dumps(
        {
            "config": dataclasses.asdict(ckpt.config),
            "iteration": int(ckpt.iteration),
            "seed": int(ckpt.seed),
            "tensors": entries,
        },
        separators=(",", ":"),
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for raw in payloads:
            fh.write(raw)


def load_checkpoint(path) -> CheckpointData:
    blob = Path(path).read_bytes()
    if len(blob) < 20 or blob[:8] != MAGIC:
        raise CorruptCheckpointError(f"{path}: not a checkpoint file (bad magic)")
    (version,) = struct.unpack("<I", blob[8:12])
    if version != VERSION:
        raise CheckpointVersionError(f"{path}: format version {version}, expected {VERSION}")
    (hlen,) = struct.unpack("<Q", blob[12:20])
    if 20 + hlen > len(blob):
        raise CorruptCheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(blob[20 : 20 + hlen].decode("utf-8"))
        config = NetworkConfig(
            **{
                k: tuple(v) if isinstance(v, list) else v
                for k, v in header["config"].items()
            }
        )
        manifest = header["tensors"]
        iteration = int(header["iteration"])
        seed = int(header["seed"])
    except (ValueError, KeyError, TypeError) as exc:
        raise CorruptCheckpointError(f"{path}: unreadable header ({exc})") from None

    payload = blob[20 + hlen :]
    tensors: dict[str, np.ndarray] = {}
    total = 0
    for entry in manifest:
        try:
            name = entry["name"]
            dt = _NAME_TO_DTYPE[entry["dtype"]]
            shape = tuple(int(s) for s in entry["shape"])
            off, nbytes = int(entry["offset"]), int(entry["nbytes"])
        except (KeyError, TypeError, ValueError) as exc:
            raise CorruptCheckpointError(f"{path}: bad manifest entry ({exc})") from None
        if name in tensors:
            raise CorruptCheckpointError(f"{path}: duplicate tensor name {name!r}")
        expected = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        if nbytes != expected or off + nbytes > len(payload):
            raise CorruptCheckpointError(f"{path}: manifest inconsistent for {name!r}")
        tensors[name] = np.frombuffer(payload[off : off + nbytes], dtype=dt).reshape(shape).copy()
        total += nbytes
    if total != len(payload):
        raise CorruptCheckpointError(
            f"{path}: payload size {len(payload)} does not match manifest total {total}"
        )
    return CheckpointData(config=config, tensors=tensors, iteration=iteration, seed=seed)


def restore_model(model: DenoiseNet, ckpt: CheckpointData) -> None:
    """Copy "model.*" tensors into the model in place; the tensor set must
    match the model's parameters exactly (names, shapes, dtypes)."""
    for name, param in model.named_parameters():
        key = f"model.{name}"
        if key not in ckpt.tensors:
            raise CheckpointShapeError(f"checkpoint is missing parameter {name!r}")
        stored = ckpt.tensors[key]
        if stored.shape != param.shape:
            raise CheckpointShapeError(
                f"parameter {name!r}: checkpoint shape {stored.shape} vs model {param.shape}"
            )
        if np.dtype(stored.dtype) != np.dtype(param.data.dtype):
            raise CheckpointShapeError(
                f"parameter {name!r}: checkpoint dtype {stored.dtype} vs model {param.data.dtype}"
            )
        param.data = stored.copy()
        param.grad = None


def model_from_checkpoint(ckpt: CheckpointData) -> DenoiseNet:
    model = build(ckpt.config, seed=0)
    restore_model(model, ckpt)
    return model


def model_tensors(model: DenoiseNet) -> dict[str, np.ndarray]:
    return {f"model.{name}": p.data for name, p in model.named_parameters()}
