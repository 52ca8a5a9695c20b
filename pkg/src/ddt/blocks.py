"""Dual-branch transformer blocks.

A block mixes spatial information two ways at once: a local branch runs
attention inside non-overlapping p x p patches, a global branch runs it
among tokens that occupy the same relative position across a g x g patch
tiling (a strided regrouping, so its "patches" have dilated receptive
fields). The channel stream is widened 2x, split between the branches,
re-fused by a 1x1 conv, and followed by a depthwise-conv feed-forward
network. Both sub-layers are residual around pre-layer-norm.

Ablation hooks: `branch` picks the partitioning pair (dual / local /
global; single-branch variants keep two attention operators so parameter
counts match the dual model exactly), `attention` swaps the operator
(deformable / dense / mlp-mixer).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import DeformAttnConfig, DeformableAttention, DenseAttention, TokenMixer
from .nn import ChannelLayerNorm, Conv2d, Module, gelu
from .tensor import ShapeMismatchError, Tensor, concat, permute, reshape, split

__all__ = [
    "BlockConfig",
    "BRANCH_KINDS",
    "ATTENTION_KINDS",
    "partition_local",
    "unpartition_local",
    "partition_global",
    "unpartition_global",
    "DualBranchAttention",
    "FeedForward",
    "TransformerBlock",
]

BRANCH_KINDS = ("dual", "local", "global")
ATTENTION_KINDS = ("deformable", "dense", "mlp-mixer")


@dataclass(frozen=True)
class BlockConfig:
    channels: int
    heads: int
    p_local: int = 8  # patch side, pixels
    p_global: int = 8  # patches per side of the global tiling
    gamma: int = 2
    offset_scale: float | None = None
    ffn_expansion: int = 4
    branch: str = "dual"
    attention: str = "deformable"

    def __post_init__(self):
        if self.branch not in BRANCH_KINDS:
            raise ValueError(f"branch must be one of {BRANCH_KINDS}, got {self.branch!r}")
        if self.attention not in ATTENTION_KINDS:
            raise ValueError(f"attention must be one of {ATTENTION_KINDS}, got {self.attention!r}")
        if self.channels <= 0 or self.channels % self.heads:
            raise ValueError(f"channels {self.channels} not divisible by heads {self.heads}")
        if self.attention == "deformable":
            if self.p_local % self.gamma or self.p_global % self.gamma:
                raise ValueError(
                    f"patch sides ({self.p_local}, {self.p_global}) must be divisible by gamma={self.gamma}"
                )
        if self.ffn_expansion < 1:
            raise ValueError(f"ffn_expansion must be >= 1, got {self.ffn_expansion}")


# ---------------------------------------------------------------------------
# patch partitioning (bijective rearrangements)
# ---------------------------------------------------------------------------


def partition_local(x: Tensor, p: int) -> Tensor:
    """[N, C, H, W] -> [N*(H/p)*(W/p), C, p, p]: non-overlapping p x p
    patches, raster order, patch index fastest over width."""
    n, c, h, w = x.shape
    if h % p or w % p:
        raise ShapeMismatchError(f"partition_local: {h}x{w} not divisible by p={p}")
    t = reshape(x, (n, c, h // p, p, w // p, p))
    t = permute(t, (0, 2, 4, 1, 3, 5))  # [N, H/p, W/p, C, p, p]
    return reshape(t, (n * (h // p) * (w // p), c, p, p))


def unpartition_local(x: Tensor, n: int, h: int, w: int, p: int) -> Tensor:
    c = x.shape[1]
    t = reshape(x, (n, h // p, w // p, c, p, p))
    t = permute(t, (0, 3, 1, 4, 2, 5))  # [N, C, H/p, p, W/p, p]
    return reshape(t, (n, c, h, w))


def partition_global(x: Tensor, g: int) -> Tensor:
    """[N, C, H, W] -> [N*(H/g)*(W/g), C, g, g]: each output "patch" is the
    g x g set of tokens sharing one relative position across a g x g patch
    tiling, i.e. tokens with stride (H/g, W/g)."""
    n, c, h, w = x.shape
    if h % g or w % g:
        raise ShapeMismatchError(f"partition_global: {h}x{w} not divisible by g={g}")
    t = reshape(x, (n, c, g, h // g, g, w // g))  # axes: n, c, pi, ri, pj, rj
    t = permute(t, (0, 3, 5, 1, 2, 4))  # [N, ri, rj, C, pi, pj]
    return reshape(t, (n * (h // g) * (w // g), c, g, g))


def unpartition_global(x: Tensor, n: int, h: int, w: int, g: int) -> Tensor:
    c = x.shape[1]
    t = reshape(x, (n, h // g, w // g, c, g, g))  # axes: n, ri, rj, c, pi, pj
    t = permute(t, (0, 3, 4, 1, 5, 2))  # [N, C, pi, ri, pj, rj]
    return reshape(t, (n, c, h, w))


# ---------------------------------------------------------------------------
# DDA / FFN / block
# ---------------------------------------------------------------------------


def _make_operator(cfg: BlockConfig, width: int, patch_side: int, rng, dtype):
    if cfg.attention == "deformable":
        return DeformableAttention(
            DeformAttnConfig(width, cfg.heads, cfg.gamma, cfg.offset_scale), rng=rng, dtype=dtype
        )
    if cfg.attention == "dense":
        return DenseAttention(width, cfg.heads, rng=rng, dtype=dtype)
    return TokenMixer(width, patch_side * patch_side, rng=rng, dtype=dtype)


class DualBranchAttention(Module):
    """Expand 1x1 conv (C -> 2C), two parallel C-wide attention branches on
    different partitionings, concat, fuse 1x1 conv (2C -> C).

    branch="dual" routes the halves through (local, global) partitioning;
    "local"/"global" route both halves through the same partitioning, which
    keeps the parameter count identical to the dual block.
    """

    def __init__(self, cfg: BlockConfig, *, rng, dtype=np.float32):
        self.cfg = cfg
        c = cfg.channels
        kinds = {"dual": ("local", "global"), "local": ("local", "local"), "global": ("global", "global")}
        self.kinds = kinds[cfg.branch]
        self.expand = Conv2d(c, 2 * c, 1, rng=rng, dtype=dtype)
        sides = {"local": cfg.p_local, "global": cfg.p_global}
        self.op_a = _make_operator(cfg, c, sides[self.kinds[0]], rng, dtype)
        self.op_b = _make_operator(cfg, c, sides[self.kinds[1]], rng, dtype)
        self.fuse = Conv2d(2 * c, c, 1, rng=rng, dtype=dtype)

    def _branch(self, t: Tensor, kind: str, op: Module) -> Tensor:
        n, c, h, w = t.shape
        if kind == "local":
            out = op(partition_local(t, self.cfg.p_local))
            return unpartition_local(out, n, h, w, self.cfg.p_local)
        out = op(partition_global(t, self.cfg.p_global))
        return unpartition_global(out, n, h, w, self.cfg.p_global)

    def forward(self, x: Tensor) -> Tensor:
        n, c, h, w = x.shape
        if c != self.cfg.channels:
            raise ShapeMismatchError(f"block built for C={self.cfg.channels}, got {c}")
        u = self.expand(x)
        u_a, u_b = split(u, 2, axis=1)
        y_a = self._branch(u_a, self.kinds[0], self.op_a)
        y_b = self._branch(u_b, self.kinds[1], self.op_b)
        return self.fuse(concat([y_a, y_b], axis=1))


class FeedForward(Module):
    """1x1 conv C -> eC, 3x3 depthwise conv, GELU, 1x1 conv eC -> C."""

    def __init__(self, channels: int, expansion: int, *, rng, dtype=np.float32):
        hidden = channels * expansion
        self.proj_in = Conv2d(channels, hidden, 1, rng=rng, dtype=dtype)
        self.dw = Conv2d(hidden, hidden, 3, padding=1, groups=hidden, rng=rng, dtype=dtype)
        self.proj_out = Conv2d(hidden, channels, 1, rng=rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return self.proj_out(gelu(self.dw(self.proj_in(x))))


class TransformerBlock(Module):
    """Pre-norm residual block: x + DDA(LN(x)), then + FFN(LN(.))."""

    def __init__(self, cfg: BlockConfig, *, rng, dtype=np.float32):
        self.norm1 = ChannelLayerNorm(cfg.channels, dtype=dtype)
        self.attn = DualBranchAttention(cfg, rng=rng, dtype=dtype)
        self.norm2 = ChannelLayerNorm(cfg.channels, dtype=dtype)
        self.ffn = FeedForward(cfg.channels, cfg.ffn_expansion, rng=rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        x = x + self.attn(self.norm1(x))
        return x + self.ffn(self.norm2(x))
