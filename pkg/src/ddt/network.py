"""The denoising network: a 4-level U-shaped transformer.

3x3 input projection, three encoder stages with pixel-unshuffle
downsampling (channels C0 -> 2C0 -> 4C0 -> 8C0), a bottleneck stage, a
mirrored decoder with pixel-shuffle upsampling and skip fusion (concat +
1x1 conv), a refinement stage at the first-level width, and a
zero-initialized 3x3 output conv so the model starts as the identity:
I_out = I_in + residual.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .blocks import BlockConfig, TransformerBlock
from .nn import Conv2d, Module, pixel_shuffle, pixel_unshuffle
from .tensor import ShapeMismatchError, Tensor, concat

__all__ = ["NetworkConfig", "DenoiseNet", "build", "toy_config"]

_DTYPES = {"f32": np.float32, "f64": np.float64}


@dataclass(frozen=True)
class NetworkConfig:
    base_channels: int = 32
    encoder_blocks: tuple[int, int, int] = (4, 6, 6)
    bottleneck_blocks: int = 8
    decoder_blocks: tuple[int, int, int] = (6, 6, 4)  # levels 2, 1, 0
    refinement_blocks: int = 4
    heads: tuple[int, int, int, int] = (1, 2, 4, 8)
    p_local: int = 8
    p_global: int = 8
    gamma: int = 2
    offset_scale: float | None = None
    ffn_expansion: int = 4
    branch: str = "dual"
    attention: str = "deformable"
    dtype: str = "f32"

    def validate(self) -> None:
        if len(self.encoder_blocks) != 3 or len(self.decoder_blocks) != 3:
            raise ValueError("encoder_blocks and decoder_blocks must each list 3 stages")
        if len(self.heads) != 4:
            raise ValueError("heads must list 4 values (3 encoder levels + bottleneck)")
        if self.base_channels < 2 or self.base_channels % 2:
            raise ValueError(f"base_channels must be even and >= 2, got {self.base_channels}")
        for level in range(4):
            c = self.channels(level)
            if (c // 2) % self.heads[level]:
                raise ValueError(
                    f"heads[{level}]={self.heads[level]} must divide half the level width {c}//2={c // 2}"
                )
        if self.dtype not in _DTYPES:
            raise ValueError(f"dtype must be f32 or f64, got {self.dtype!r}")
        if min(self.encoder_blocks) < 1 or min(self.decoder_blocks) < 1 or self.bottleneck_blocks < 1:
            raise ValueError("every stage needs at least one block")
        if self.refinement_blocks < 0:
            raise ValueError("refinement_blocks must be >= 0")
        # delegate patch/gamma/branch/attention checks
        self.block_config(0)

    def channels(self, level: int) -> int:
        return self.base_channels * (1 << level)

    def block_config(self, level: int) -> BlockConfig:
        return BlockConfig(
            channels=self.channels(level),
            heads=self.heads[level],
            p_local=self.p_local,
            p_global=self.p_global,
            gamma=self.gamma,
            offset_scale=self.offset_scale,
            ffn_expansion=self.ffn_expansion,
            branch=self.branch,
            attention=self.attention,
        )

    @property
    def np_dtype(self):
        return _DTYPES[self.dtype]

    @property
    def divisor(self) -> int:
        """Input extents must be divisible by this (3 halvings x patching)."""
        return 8 * math.lcm(self.p_local, self.p_global)


def toy_config(**overrides) -> NetworkConfig:
    """Desk-scale config: runs on 32x32 inputs in well under a second."""
    base = dict(
        base_channels=8,
        encoder_blocks=(1, 1, 1),
        bottleneck_blocks=1,
        decoder_blocks=(1, 1, 1),
        refinement_blocks=1,
        heads=(1, 1, 2, 2),
        p_local=4,
        p_global=4,
        gamma=2,
    )
    base.update(overrides)
    return NetworkConfig(**base)


class _Down(Module):
    """Halve extents, double channels: pixel-unshuffle(2) then 1x1 conv 4C -> 2C."""

    def __init__(self, channels: int, *, rng, dtype):
        self.proj = Conv2d(4 * channels, 2 * channels, 1, rng=rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return self.proj(pixel_unshuffle(x, 2))


class _Up(Module):
    """Double extents, halve channels: 1x1 conv C -> 2C then pixel-shuffle(2)."""

    def __init__(self, channels: int, *, rng, dtype):
        self.proj = Conv2d(channels, 2 * channels, 1, rng=rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return pixel_shuffle(self.proj(x), 2)


class DenoiseNet(Module):
    def __init__(self, config: NetworkConfig, seed: int = 0):
        config.validate()
        self.config = config
        rng = np.random.default_rng(seed)
        dt = config.np_dtype
        c0 = config.base_channels

        def stage(level: int, count: int) -> list[TransformerBlock]:
            cfg = config.block_config(level)
            return [TransformerBlock(cfg, rng=rng, dtype=dt) for _ in range(count)]

        self.conv_in = Conv2d(3, c0, 3, padding=1, rng=rng, dtype=dt)
        self.enc0 = stage(0, config.encoder_blocks[0])
        self.down0 = _Down(config.channels(0), rng=rng, dtype=dt)
        self.enc1 = stage(1, config.encoder_blocks[1])
        self.down1 = _Down(config.channels(1), rng=rng, dtype=dt)
        self.enc2 = stage(2, config.encoder_blocks[2])
        self.down2 = _Down(config.channels(2), rng=rng, dtype=dt)
        self.bottleneck = stage(3, config.bottleneck_blocks)
        self.up2 = _Up(config.channels(3), rng=rng, dtype=dt)
        self.fuse2 = Conv2d(2 * config.channels(2), config.channels(2), 1, rng=rng, dtype=dt)
        self.dec2 = stage(2, config.decoder_blocks[0])
        self.up1 = _Up(config.channels(2), rng=rng, dtype=dt)
        self.fuse1 = Conv2d(2 * config.channels(1), config.channels(1), 1, rng=rng, dtype=dt)
        self.dec1 = stage(1, config.decoder_blocks[1])
        self.up0 = _Up(config.channels(1), rng=rng, dtype=dt)
        self.fuse0 = Conv2d(2 * config.channels(0), config.channels(0), 1, rng=rng, dtype=dt)
        self.dec0 = stage(0, config.decoder_blocks[2])
        self.refine = stage(0, config.refinement_blocks)
        self.conv_out = Conv2d(c0, 3, 3, padding=1, init="zero", dtype=dt)

    def forward(self, image: Tensor, trace: dict | None = None) -> Tensor:
        n, c, h, w = image.shape
        if c != 3:
            raise ShapeMismatchError(f"expected 3-channel input, got {image.shape}")
        d = self.config.divisor
        if h % d or w % d:
            raise ShapeMismatchError(
                f"input extents {h}x{w} must be divisible by {d}; pad the image first"
            )

        def run(blocks, t):
            for blk in blocks:
                t = blk(t)
            return t

        def note(key, t):
            if trace is not None:
                trace[key] = t.shape

        x = self.conv_in(image)
        s0 = run(self.enc0, x)
        note("enc0", s0)
        x = self.down0(s0)
        s1 = run(self.enc1, x)
        note("enc1", s1)
        x = self.down1(s1)
        s2 = run(self.enc2, x)
        note("enc2", s2)
        x = self.down2(s2)
        x = run(self.bottleneck, x)
        note("bottleneck", x)
        x = self.fuse2(concat([self.up2(x), s2], axis=1))
        x = run(self.dec2, x)
        note("dec2", x)
        x = self.fuse1(concat([self.up1(x), s1], axis=1))
        x = run(self.dec1, x)
        note("dec1", x)
        x = self.fuse0(concat([self.up0(x), s0], axis=1))
        x = run(self.dec0, x)
        note("dec0", x)
        x = run(self.refine, x)
        note("refine", x)
        return image + self.conv_out(x)


def build(config: NetworkConfig, seed: int = 0) -> DenoiseNet:
    """Construct the network with parameters that are a pure function of
    (config, seed): same seed gives bit-identical initialization."""
    return DenoiseNet(config, seed)
