"""AdamW with decoupled weight decay, plus the cosine learning-rate schedule.

Update rule per parameter (t is 1-indexed):

    m = b1 m + (1 - b1) g          mhat = m / (1 - b1^t)
    v = b2 v + (1 - b2) g^2        vhat = v / (1 - b2^t)
    w = w - lr (mhat / (sqrt(vhat) + eps) + wd * w)

The decay term multiplies the weight directly (never routed through the
gradient/moment estimates). All state arithmetic stays in the parameter
dtype so trajectories are bit-reproducible for a fixed seed.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .tensor import Tensor

__all__ = ["AdamW", "cosine_lr"]


class AdamW:
    def __init__(
        self,
        named_params: Sequence[tuple[str, Tensor]],
        beta1: float = 0.9,
        beta2: float = 0.99,
        eps: float = 1e-8,
        weight_decay: float = 1e-4,
        start_iteration: int = 0,
    ):
        self.params = list(named_params)
        names = [n for n, _ in self.params]
        if len(set(names)) != len(names):
            raise ValueError("duplicate parameter names")
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = int(start_iteration)
        self.m = {n: np.zeros_like(p.data) for n, p in self.params}
        self.v = {n: np.zeros_like(p.data) for n, p in self.params}

    def step(self, lr: float) -> None:
        self.t += 1
        if self.t < 1:
            raise ValueError(f"optimizer step counter must be >= 1, got {self.t}")
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name, p in self.params:
            g = p.grad
            if g is None:
                raise RuntimeError(f"parameter {name!r} has no gradient; run backward first")
            dt = p.data.dtype.type
            m = self.m[name] = dt(self.beta1) * self.m[name] + dt(1.0 - self.beta1) * g
            v = self.v[name] = dt(self.beta2) * self.v[name] + dt(1.0 - self.beta2) * (g * g)
            mhat = m / dt(bc1)
            vhat = v / dt(bc2)
            p.data = p.data - dt(lr) * (mhat / (np.sqrt(vhat) + dt(self.eps)) + dt(self.weight_decay) * p.data)
            p.grad = None

    def moments(self) -> dict[str, np.ndarray]:
        """Serializable optimizer state, keyed opt.m/<name> and opt.v/<name>."""
        out: dict[str, np.ndarray] = {}
        for name, _ in self.params:
            out[f"opt.m/{name}"] = self.m[name]
        for name, _ in self.params:
            out[f"opt.v/{name}"] = self.v[name]
        return out

    def load_moments(self, tensors: dict[str, np.ndarray]) -> None:
        for name, p in self.params:
            for store, key in ((self.m, f"opt.m/{name}"), (self.v, f"opt.v/{name}")):
                if key in tensors:
                    arr = tensors[key]
                    if arr.shape != p.shape:
                        raise ValueError(f"moment {key!r} shape {arr.shape} vs parameter {p.shape}")
                    store[name] = arr.astype(p.data.dtype).copy()


def cosine_lr(t: int, total: int, lr_init: float = 3e-4, lr_final: float = 1e-6) -> float:
    """lr_final + (lr_init - lr_final)(1 + cos(pi t / total)) / 2 for
    t in [0, total]; t beyond the schedule clamps to lr_final."""
    if total < 1:
        raise ValueError(f"schedule length must be >= 1, got {total}")
    if t < 0:
        raise ValueError(f"step must be >= 0, got {t}")
    if t > total:
        return lr_final
    return lr_final + 0.5 * (lr_init - lr_final) * (1.0 + math.cos(math.pi * t / total))
