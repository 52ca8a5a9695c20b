"""Training loop, loss, logging, and held-out evaluation.

Determinism contract: every random decision during training is drawn from a
generator seeded by (seed, iteration, batch_index), so two runs with the
same config and dataset produce byte-identical logs and checkpoints. Wall
time is logged as 0.0 unless explicitly enabled, for the same reason.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import CheckpointData, model_tensors, save_checkpoint
from .data import SamplePair, dihedral_transform, pad_to_multiple, random_crop, synth_pair
from .metrics import psnr, ssim
from .network import DenoiseNet, NetworkConfig
from .optim import AdamW, cosine_lr
from .tensor import Tape, Tensor, sub, tabs, tmean

__all__ = [
    "TrainConfig",
    "NumericError",
    "l1_loss",
    "train",
    "denoise_image",
    "evaluate",
    "CSV_HEADER",
]

CSV_HEADER = "iter,loss,psnr,ssim,lr,wall_time_s"


class NumericError(RuntimeError):
    """Raised when the loss turns non-finite during training."""


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 2000
    lr_init: float = 3e-4
    lr_final: float = 1e-6
    beta1: float = 0.9
    beta2: float = 0.99
    weight_decay: float = 1e-4
    batch_size: int = 4
    # (start_iteration, patch_side) pairs; the entry with the largest start
    # <= current iteration is active. Must begin at iteration 0.
    patch_schedule: tuple[tuple[int, int], ...] = ((0, 64),)
    augment: bool = True
    seed: int = 0
    sigma_min: float = 0.0
    sigma_max: float = 50.0
    log_every: int = 50
    checkpoint_every: int = 1000
    log_wall_time: bool = False
    # When False the per-sample generator ignores the iteration index, so
    # every step sees the identical crop/noise draw (fixed-pair overfitting).
    resample_noise: bool = True

    def validate(self, divisor: int) -> None:
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.patch_schedule:
            raise ValueError("patch_schedule must not be empty")
        if self.patch_schedule[0][0] != 0:
            raise ValueError(
                f"patch_schedule must start at iteration 0, got {self.patch_schedule[0][0]}"
            )
        starts = [s for s, _ in self.patch_schedule]
        if sorted(starts) != starts or len(set(starts)) != len(starts):
            raise ValueError(f"patch_schedule starts must be strictly increasing: {starts}")
        for start, side in self.patch_schedule:
            if side % divisor != 0:
                raise ValueError(
                    f"patch side {side} (from iteration {start}) is not divisible by "
                    f"the network extent divisor {divisor}"
                )
        if not 0 <= self.sigma_min <= self.sigma_max:
            raise ValueError(
                f"need 0 <= sigma_min <= sigma_max, got [{self.sigma_min}, {self.sigma_max}]"
            )
        if self.log_every < 1 or self.checkpoint_every < 1:
            raise ValueError("log_every and checkpoint_every must be >= 1")


def l1_loss(pred: Tensor, target: Tensor) -> Tensor:
    if pred.shape != target.shape:
        raise ValueError(f"loss shape mismatch: pred {pred.shape} vs target {target.shape}")
    return tmean(tabs(sub(pred, target)))


def _patch_side(schedule: tuple[tuple[int, int], ...], it: int) -> int:
    side = schedule[0][1]
    for start, s in schedule:
        if start <= it:
            side = s
    return side


def _draw_sample(
    dataset: list[np.ndarray],
    cfg: TrainConfig,
    it: int,
    b: int,
    side: int,
    dtype,
) -> SamplePair:
    step = it if cfg.resample_noise else 0
    rng = np.random.default_rng([cfg.seed, step, b])
    img = dataset[int(rng.integers(len(dataset)))]
    crop = random_crop(img, side, rng)
    if cfg.augment:
        crop = dihedral_transform(crop, int(rng.integers(8)))
    sigma = float(rng.uniform(cfg.sigma_min, cfg.sigma_max))
    pair = synth_pair(np.ascontiguousarray(crop, dtype=dtype), sigma, rng)
    return pair


def _batch_metrics(out: np.ndarray, clean: np.ndarray) -> tuple[float, float]:
    ps, ss = [], []
    for b in range(out.shape[0]):
        pred = np.clip(out[b], 0.0, 1.0)
        ps.append(psnr(pred, clean[b]))
        ss.append(ssim(pred, clean[b]))
    return float(np.mean(ps)), float(np.mean(ss))


def _format_row(it: int, loss: float, p: float, s: float, lr: float, wall: float) -> str:
    return ",".join([str(it), repr(loss), repr(p), repr(s), repr(lr), repr(wall)])


@dataclass
class TrainResult:
    rows: list[dict] = field(default_factory=list)

    @property
    def final(self) -> dict:
        return self.rows[-1]


def train(
    model: DenoiseNet,
    net_cfg: NetworkConfig,
    cfg: TrainConfig,
    dataset: list[np.ndarray],
    out_dir=None,
    log=None,
) -> TrainResult:
    """Train in place. Writes metrics.csv and checkpoints under out_dir when
    given; `log` is an optional callable fed each CSV row string."""
    if not dataset:
        raise ValueError("dataset must contain at least one image")
    cfg.validate(net_cfg.divisor)
    dtype = net_cfg.np_dtype

    opt = AdamW(
        model.named_parameters(),
        beta1=cfg.beta1,
        beta2=cfg.beta2,
        weight_decay=cfg.weight_decay,
    )

    csv_file = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        csv_file = open(os.path.join(out_dir, "metrics.csv"), "w")
        csv_file.write(CSV_HEADER + "\n")

    def emit(row: str) -> None:
        if csv_file is not None:
            csv_file.write(row + "\n")
            csv_file.flush()
        if log is not None:
            log(row)

    def dump(name: str, iteration: int) -> None:
        if out_dir is None:
            return
        tensors = model_tensors(model)
        tensors.update(opt.moments())
        ckpt = CheckpointData(
            config=net_cfg, tensors=tensors, iteration=iteration, seed=cfg.seed
        )
        save_checkpoint(os.path.join(out_dir, name), ckpt)

    result = TrainResult()
    t0 = time.perf_counter()
    try:
        for it in range(cfg.iterations):
            side = _patch_side(cfg.patch_schedule, it)
            pairs = [
                _draw_sample(dataset, cfg, it, b, side, dtype) for b in range(cfg.batch_size)
            ]
            clean = np.stack([p.clean for p in pairs])
            noisy = np.stack([p.noisy for p in pairs])

            with Tape() as tape:
                out = model(Tensor(noisy))
                loss = l1_loss(out, Tensor(clean))
            loss_val = float(loss.item())
            if not np.isfinite(loss_val):
                dump("diverged.ddt", it)
                raise NumericError(
                    f"non-finite loss {loss_val} at iteration {it}; "
                    "diagnostic checkpoint written" + ("" if out_dir else " (no out_dir)")
                )
            tape.backward(loss)

            lr = cosine_lr(it, cfg.iterations, cfg.lr_init, cfg.lr_final)
            opt.step(lr)

            if it % cfg.log_every == 0 or it == cfg.iterations - 1:
                bp, bs = _batch_metrics(out.data, clean)
                wall = (time.perf_counter() - t0) if cfg.log_wall_time else 0.0
                row = {
                    "iter": it,
                    "loss": loss_val,
                    "psnr": bp,
                    "ssim": bs,
                    "lr": lr,
                    "wall_time_s": wall,
                }
                result.rows.append(row)
                emit(_format_row(it, loss_val, bp, bs, lr, wall))

            if (it + 1) % cfg.checkpoint_every == 0 and it + 1 < cfg.iterations:
                dump(f"ckpt_{it + 1:06d}.ddt", it + 1)

        dump("checkpoint.ddt", cfg.iterations)
    finally:
        if csv_file is not None:
            csv_file.close()
    return result


def denoise_image(model: DenoiseNet, noisy: np.ndarray) -> np.ndarray:
    """Run one [3,H,W] image through the model, reflect-padding to the
    required extent multiple and cropping back. Output is clamped to [0,1]."""
    d = model.config.divisor
    padded, (h, w) = pad_to_multiple(noisy.astype(model.config.np_dtype), d)
    out = model(Tensor(padded[None]))
    return np.clip(out.data[0, :, :h, :w], 0.0, 1.0)


def evaluate(
    model: DenoiseNet,
    testset: list[np.ndarray],
    sigmas=(15.0, 25.0, 50.0),
    seed: int = 0,
) -> dict[float, dict[str, float]]:
    """Mean PSNR/SSIM over a held-out set at each noise level, plus the
    metrics of the raw noisy input as a baseline."""
    if not testset:
        raise ValueError("testset must contain at least one image")
    report: dict[float, dict[str, float]] = {}
    for sigma in sigmas:
        ps, ss, nps, nss = [], [], [], []
        for i, clean in enumerate(testset):
            rng = np.random.default_rng([seed, i, int(round(float(sigma) * 1000))])
            pair = synth_pair(clean, float(sigma), rng)
            out = denoise_image(model, pair.noisy)
            noisy = np.clip(pair.noisy, 0.0, 1.0)
            ps.append(psnr(out, clean))
            ss.append(ssim(out, clean))
            nps.append(psnr(noisy, clean))
            nss.append(ssim(noisy, clean))
        report[float(sigma)] = {
            "psnr": float(np.mean(ps)),
            "ssim": float(np.mean(ss)),
            "noisy_psnr": float(np.mean(nps)),
            "noisy_ssim": float(np.mean(nss)),
        }
    return report
