"""Deformable multi-head attention.

Keys and values are not taken from every pixel: a sparse grid of reference
points (one per gamma x gamma cell) is shifted by learned, input-dependent
offsets, features are bilinearly sampled there, gated by a learned
modulation scalar, and attention runs between all HW queries and the
HW/gamma^2 sampled key/value tokens.

Also provides the dense full-token attention and a token-mixing MLP used as
ablation drop-ins for the same spatial-operator slot.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .nn import Conv2d, Module, bilinear_sample
from .tensor import (
    ShapeMismatchError,
    Tensor,
    clip,
    constant,
    matmul,
    mul,
    narrow,
    parameter,
    permute,
    reshape,
    sigmoid,
    softmax,
    tanh,
)

__all__ = [
    "DeformAttnConfig",
    "DeformableField",
    "reference_grid",
    "PositionSubnet",
    "sample_deformed",
    "DeformableAttention",
    "DenseAttention",
    "TokenMixer",
    "multi_head_attention",
]


@dataclass(frozen=True)
class DeformAttnConfig:
    channels: int
    heads: int
    gamma: int = 2
    offset_scale: float | None = None  # pixels; defaults to gamma

    def __post_init__(self):
        if self.channels <= 0 or self.heads <= 0 or self.gamma < 1:
            raise ValueError(f"invalid attention config: {self}")
        if self.channels % self.heads:
            raise ValueError(f"channels {self.channels} not divisible by heads {self.heads}")

    @property
    def scale(self) -> float:
        return float(self.gamma if self.offset_scale is None else self.offset_scale)

    @property
    def head_dim(self) -> int:
        return self.channels // self.heads


@dataclass
class DeformableField:
    """Where to sample: reference grid plus learned offsets and modulation.

    ref_points: [Hg, Wg, 2] normalized coords (constant for a given H, W,
    gamma). offsets: [N, Hg, Wg, 2] normalized. modulation: [N, Hg, Wg, 1],
    values in (0, 2). Coordinate layout: [..., 0] = x, [..., 1] = y.
    """

    ref_points: np.ndarray
    offsets: Tensor
    modulation: Tensor


def reference_grid(h: int, w: int, gamma: int, dtype=np.float32) -> np.ndarray:
    """One point at the center of each gamma x gamma cell, in normalized
    [-1, 1] align-corners coordinates. Returns [h/gamma, w/gamma, 2]."""
    if gamma < 1 or h % gamma or w % gamma:
        raise ShapeMismatchError(f"reference_grid: {h}x{w} not divisible by gamma={gamma}")
    cy = gamma * np.arange(h // gamma, dtype=np.float64) + (gamma - 1) / 2.0
    cx = gamma * np.arange(w // gamma, dtype=np.float64) + (gamma - 1) / 2.0
    ny = 2.0 * cy / (h - 1) - 1.0 if h > 1 else np.zeros_like(cy)
    nx = 2.0 * cx / (w - 1) - 1.0 if w > 1 else np.zeros_like(cx)
    gx, gy = np.meshgrid(nx, ny)  # [Hg, Wg] each
    return np.stack([gx, gy], axis=-1).astype(dtype)


class PositionSubnet(Module):
    """Offset/modulation head: 5x5 depthwise conv with stride gamma, then a
    zero-initialized 1x1 conv down to 3 channels (two offset, one
    modulation). Zero init makes the attention start at the undeformed
    reference grid with modulation exactly 1."""

    def __init__(self, channels: int, gamma: int, scale: float, *, rng, dtype=np.float32):
        self.gamma = gamma
        self.scale = scale
        self.dw = Conv2d(channels, channels, 5, stride=gamma, padding=2, groups=channels, rng=rng, dtype=dtype)
        self.pw = Conv2d(channels, 3, 1, init="zero", dtype=dtype)

    def forward(self, x: Tensor) -> tuple[Tensor, Tensor]:
        n, c, h, w = x.shape
        if h % self.gamma or w % self.gamma:
            raise ShapeMismatchError(f"position subnet: {h}x{w} not divisible by gamma={self.gamma}")
        raw = self.pw(self.dw(x))  # [N, 3, Hg, Wg]
        raw_p = narrow(raw, 1, 0, 2)
        raw_m = narrow(raw, 1, 2, 1)
        # tanh bounds the offset to +-scale pixels; convert to normalized
        # units via the half-extent of each axis (align-corners).
        norm = np.array(
            [2.0 * self.scale / max(w - 1, 1), 2.0 * self.scale / max(h - 1, 1)],
            dtype=x.data.dtype,
        ).reshape(1, 2, 1, 1)
        dp = mul(tanh(raw_p), constant(norm, like=x))
        dm = mul(sigmoid(raw_m), 2.0)
        return permute(dp, (0, 2, 3, 1)), permute(dm, (0, 2, 3, 1))


def sample_deformed(x: Tensor, field: DeformableField) -> Tensor:
    """x' = bilinear(x, ref + offsets, clamped to [-1,1]) * modulation.
    Returns [N, C, Hg, Wg]; modulation broadcasts over channels."""
    hg, wg, _ = field.ref_points.shape
    if field.offsets.shape[1:] != (hg, wg, 2):
        raise ShapeMismatchError(
            f"sample_deformed: offsets {field.offsets.shape} vs grid {field.ref_points.shape}"
        )
    ref = constant(field.ref_points[None], like=field.offsets)
    coords = clip(field.offsets + ref, -1.0, 1.0)
    sampled = bilinear_sample(x, coords)
    return mul(sampled, permute(field.modulation, (0, 3, 1, 2)))


def multi_head_attention(q: Tensor, k: Tensor, v: Tensor, heads: int, return_weights: bool = False):
    """Scaled dot-product attention over flattened spatial tokens.

    q: [B, C, H, W]; k, v: [B, C, Hk, Wk]. Channels split into `heads`
    groups of d = C/heads; per head, softmax(q k^T / sqrt(d)) v; heads are
    concatenated back onto the channel axis. Returns [B, C, H, W].
    """
    b, c, h, w = q.shape
    if c % heads:
        raise ShapeMismatchError(f"attention: channels {c} not divisible by heads {heads}")
    if k.shape[:2] != (b, c) or v.shape != k.shape:
        raise ShapeMismatchError(f"attention: q {q.shape}, k {k.shape}, v {v.shape}")
    d = c // heads
    tq, tk = h * w, k.shape[2] * k.shape[3]
    qh = permute(reshape(q, (b, heads, d, tq)), (0, 1, 3, 2))  # [B, M, Tq, d]
    kh = reshape(k, (b, heads, d, tk))  # [B, M, d, Tk]
    vh = permute(reshape(v, (b, heads, d, tk)), (0, 1, 3, 2))  # [B, M, Tk, d]
    weights = softmax(matmul(qh, kh) * (1.0 / math.sqrt(d)), axis=-1)  # [B, M, Tq, Tk]
    z = matmul(weights, vh)  # [B, M, Tq, d]
    out = reshape(permute(z, (0, 1, 3, 2)), (b, c, h, w))
    return (out, weights) if return_weights else out


class DeformableAttention(Module):
    def __init__(self, cfg: DeformAttnConfig, *, rng, dtype=np.float32):
        self.cfg = cfg
        c = cfg.channels
        self.wq = Conv2d(c, c, 1, rng=rng, dtype=dtype)
        self.wk = Conv2d(c, c, 1, rng=rng, dtype=dtype)
        self.wv = Conv2d(c, c, 1, rng=rng, dtype=dtype)
        self.wo = Conv2d(c, c, 1, rng=rng, dtype=dtype)
        self.subnet = PositionSubnet(c, cfg.gamma, cfg.scale, rng=rng, dtype=dtype)

    def deformation_field(self, x: Tensor) -> DeformableField:
        n, c, h, w = x.shape
        ref = reference_grid(h, w, self.cfg.gamma, dtype=x.data.dtype)
        dp, dm = self.subnet(x)
        return DeformableField(ref, dp, dm)

    def forward(self, x: Tensor) -> Tensor:
        n, c, h, w = x.shape
        if c != self.cfg.channels:
            raise ShapeMismatchError(f"attention built for C={self.cfg.channels}, got {c}")
        if h % self.cfg.gamma or w % self.cfg.gamma:
            raise ShapeMismatchError(f"{h}x{w} not divisible by gamma={self.cfg.gamma}")
        field = self.deformation_field(x)
        xs = sample_deformed(x, field)
        out = multi_head_attention(self.wq(x), self.wk(xs), self.wv(xs), self.cfg.heads)
        return self.wo(out)


class DenseAttention(Module):
    """Full-token multi-head self-attention (every pixel is a key)."""

    def __init__(self, channels: int, heads: int, *, rng, dtype=np.float32):
        if channels % heads:
            raise ValueError(f"channels {channels} not divisible by heads {heads}")
        self.heads = heads
        self.wq = Conv2d(channels, channels, 1, rng=rng, dtype=dtype)
        self.wk = Conv2d(channels, channels, 1, rng=rng, dtype=dtype)
        self.wv = Conv2d(channels, channels, 1, rng=rng, dtype=dtype)
        self.wo = Conv2d(channels, channels, 1, rng=rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        out = multi_head_attention(self.wq(x), self.wk(x), self.wv(x), self.heads)
        return self.wo(out)


class TokenMixer(Module):
    """MLP token mixing over a fixed token count (an attention-free
    stand-in: two dense maps across the token axis with a GELU between)."""

    def __init__(self, channels: int, tokens: int, *, rng, dtype=np.float32):
        from .nn import trunc_normal

        self.tokens = tokens
        self.w_in = Conv2d(channels, channels, 1, rng=rng, dtype=dtype)
        self.mix1 = parameter(trunc_normal(rng, (tokens, tokens), dtype=dtype), dtype=dtype)
        self.b1 = parameter(np.zeros(tokens, dtype=dtype), dtype=dtype)
        self.mix2 = parameter(trunc_normal(rng, (tokens, tokens), dtype=dtype), dtype=dtype)
        self.b2 = parameter(np.zeros(tokens, dtype=dtype), dtype=dtype)
        self.w_out = Conv2d(channels, channels, 1, rng=rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        from .nn import gelu

        b, c, h, w = x.shape
        if h * w != self.tokens:
            raise ShapeMismatchError(f"token mixer built for {self.tokens} tokens, got {h}x{w}")
        t = reshape(self.w_in(x), (b, c, self.tokens))
        t = matmul(t, self.mix1) + self.b1
        t = matmul(gelu(t), self.mix2) + self.b2
        return self.w_out(reshape(t, (b, c, h, w)))
