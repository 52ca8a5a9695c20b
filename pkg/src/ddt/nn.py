"""Neural building blocks on top of the tape: convolution, channel
layer-norm, GELU, bilinear grid sampling, pixel (un)shuffle, and a minimal
``Module`` container with named parameters.

All spatial tensors are NCHW. Convolution is cross-correlation (no kernel
flip) with zero padding, matching the usual deep-learning convention.
"""

from __future__ import annotations

from typing import Iterator

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

from .tensor import (
    ShapeMismatchError,
    Tensor,
    _count,
    _finish,
    parameter,
)

__all__ = [
    "Module",
    "Conv2d",
    "ChannelLayerNorm",
    "conv2d",
    "layer_norm",
    "gelu",
    "bilinear_sample",
    "pixel_unshuffle",
    "pixel_shuffle",
    "trunc_normal",
    "SNAP_EPS_PIXELS",
]

# Sampling coordinates closer than this (in pixels) to an integer lattice
# point are snapped onto it, so that sampling exactly at pixel centers is a
# bit-exact gather even after f32 normalize/denormalize roundoff (~4e-6 px).
# Well inside the 1e-3 kink-exclusion zone used by gradient checks.
SNAP_EPS_PIXELS = 1e-4

GELU_FLOPS_PER_ELEM = 6
LAYERNORM_FLOPS_PER_ELEM = 8
BILINEAR_FLOPS_PER_ELEM = 8
BILINEAR_FLOPS_PER_COORD = 6


# ---------------------------------------------------------------------------
# Module container
# ---------------------------------------------------------------------------


class Module:
    """Attribute-walking parameter container.

    Tensors assigned to attributes count as parameters when they require
    grad; nested Modules and lists/tuples of Modules are recursed in
    attribute insertion order, so parameter order is the construction order
    and is stable for a given config.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor):
                if value.requires_grad:
                    yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{full}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def num_params(self) -> int:
        return sum(t.size for t in self.parameters())

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02, dtype=np.float32) -> np.ndarray:
    """Normal(0, std) resampled into [-2 std, 2 std] (resampling, not clipping)."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2 * std
    while np.any(bad):
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2 * std
    return out.astype(dtype)


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------


def _conv_geometry(x: Tensor, w: Tensor, bias, stride: int, padding: int, groups: int):
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeMismatchError(f"conv2d: need 4-d input/weight, got {x.shape} and {w.shape}")
    n, cin, h, wd = x.shape
    cout, cg, kh, kw = w.shape
    if kh != kw:
        raise ShapeMismatchError(f"conv2d: only square kernels supported, got {kh}x{kw}")
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    ok = (
        groups >= 1
        and cin % groups == 0
        and cout % groups == 0
        and cg == cin // groups
        and ho >= 1
        and wo >= 1
        and (bias is None or bias.shape == (cout,))
    )
    if not ok:
        raise ShapeMismatchError(
            "conv2d geometry: input NCHW="
            f"{x.shape}, weight [cout,cin/groups,k,k]={w.shape}, "
            f"bias={None if bias is None else bias.shape}, stride={stride}, "
            f"padding={padding}, groups={groups} -> output {ho}x{wo}"
        )
    return n, cin, h, wd, cout, cg, kh, ho, wo


def _windows(xp: np.ndarray, k: int, stride: int) -> np.ndarray:
    # [N, C, Ho, Wo, k, k] view, zero-copy
    win = sliding_window_view(xp, (k, k), axis=(2, 3))
    return win[:, :, ::stride, ::stride]


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
    groups: int = 1,
) -> Tensor:
    """2-d cross-correlation, NCHW.

    weight is [cout, cin/groups, k, k]. Counts 2 flops per MAC (bias adds
    excluded). Dedicated fast paths: 1x1 stride-1 (plain GEMM) and
    depthwise (groups == cin == cout).
    """
    n, cin, h, wd, cout, cg, k, ho, wo = _conv_geometry(x, weight, bias, stride, padding, groups)
    _count(2 * n * ho * wo * cout * cg * k * k)

    if k == 1 and stride == 1 and padding == 0 and groups == 1:
        return _conv1x1(x, weight, bias)
    if groups == cin and cout == cin and cg == 1:
        return _conv_depthwise(x, weight, bias, stride, padding, ho, wo)
    if groups > 1:
        return _conv_grouped(x, weight, bias, stride, padding, groups, ho, wo)
    return _conv_dense(x, weight, bias, stride, padding, ho, wo)


def _bias_term(out: np.ndarray, bias: Tensor | None) -> np.ndarray:
    if bias is not None:
        out += bias.data[None, :, None, None]
    return out


def _conv1x1(x: Tensor, weight: Tensor, bias: Tensor | None) -> Tensor:
    n, cin, h, wd = x.shape
    cout = weight.shape[0]
    w2 = weight.data.reshape(cout, cin)
    out = np.tensordot(x.data, w2, axes=([1], [1]))  # [N, H, W, cout]
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
    _bias_term(out, bias)
    inputs = (x, weight) if bias is None else (x, weight, bias)

    def bwd(g):
        gx = gw = gb = None
        if x.requires_grad:
            gx = np.tensordot(g, w2, axes=([1], [0]))  # [N, H, W, cin]
            gx = np.ascontiguousarray(gx.transpose(0, 3, 1, 2))
        if weight.requires_grad:
            gw = np.tensordot(g, x.data, axes=([0, 2, 3], [0, 2, 3]))  # [cout, cin]
            gw = gw.reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return (gx, gw) if bias is None else (gx, gw, gb)

    return _finish(out, inputs, bwd)


def _conv_dense(x, weight, bias, stride, padding, ho, wo):
    n, cin, h, wd = x.shape
    cout, _, k, _ = weight.shape
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    win = _windows(xp, k, stride)  # [N, cin, Ho, Wo, k, k]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * ho * wo, cin * k * k)
    w2 = weight.data.reshape(cout, -1)
    out = (cols @ w2.T).reshape(n, ho, wo, cout)
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
    _bias_term(out, bias)
    inputs = (x, weight) if bias is None else (x, weight, bias)

    def bwd(g):
        gx = gw = gb = None
        gr = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(n * ho * wo, cout)
        if weight.requires_grad:
            gw = (gr.T @ cols).reshape(weight.shape)
        if x.requires_grad:
            dcols = (gr @ w2).reshape(n, ho, wo, cin, k, k).transpose(0, 3, 1, 2, 4, 5)
            gxp = np.zeros_like(xp)
            for ki in range(k):
                for kj in range(k):
                    gxp[:, :, ki : ki + stride * ho : stride, kj : kj + stride * wo : stride] += dcols[
                        :, :, :, :, ki, kj
                    ]
            gx = gxp[:, :, padding : padding + h, padding : padding + wd] if padding else gxp
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return (gx, gw) if bias is None else (gx, gw, gb)

    return _finish(out, inputs, bwd)


def _conv_depthwise(x, weight, bias, stride, padding, ho, wo):
    n, c, h, wd = x.shape
    k = weight.shape[2]
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    win = _windows(xp, k, stride)  # [N, C, Ho, Wo, k, k]
    wk = weight.data[:, 0]  # [C, k, k]
    out = np.einsum("nchwij,cij->nchw", win, wk, optimize=True)
    _bias_term(out, bias)
    inputs = (x, weight) if bias is None else (x, weight, bias)

    def bwd(g):
        gx = gw = gb = None
        if weight.requires_grad:
            gw = np.einsum("nchwij,nchw->cij", win, g, optimize=True)[:, None]
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for ki in range(k):
                for kj in range(k):
                    gxp[:, :, ki : ki + stride * ho : stride, kj : kj + stride * wo : stride] += (
                        g * wk[None, :, ki, kj, None, None]
                    )
            gx = gxp[:, :, padding : padding + h, padding : padding + wd] if padding else gxp
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return (gx, gw) if bias is None else (gx, gw, gb)

    return _finish(out, inputs, bwd)


def _conv_grouped(x, weight, bias, stride, padding, groups, ho, wo):
    # correctness path for 1 < groups < cin: per-group dense conv
    n, cin, h, wd = x.shape
    cout, cg, k, _ = weight.shape
    og = cout // groups
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    win = _windows(xp, k, stride)
    out = np.empty((n, cout, ho, wo), dtype=x.data.dtype)
    cols_by_group = []
    for gidx in range(groups):
        wslice = weight.data[gidx * og : (gidx + 1) * og].reshape(og, -1)
        wing = win[:, gidx * cg : (gidx + 1) * cg]
        cols = np.ascontiguousarray(wing.transpose(0, 2, 3, 1, 4, 5)).reshape(n * ho * wo, cg * k * k)
        cols_by_group.append(cols)
        out[:, gidx * og : (gidx + 1) * og] = (
            (cols @ wslice.T).reshape(n, ho, wo, og).transpose(0, 3, 1, 2)
        )
    _bias_term(out, bias)
    inputs = (x, weight) if bias is None else (x, weight, bias)

    def bwd(g):
        gx = gw = gb = None
        if weight.requires_grad:
            gw = np.zeros_like(weight.data)
        if x.requires_grad:
            gxp = np.zeros_like(xp)
        for gidx in range(groups):
            gr = np.ascontiguousarray(
                g[:, gidx * og : (gidx + 1) * og].transpose(0, 2, 3, 1)
            ).reshape(n * ho * wo, og)
            wslice = weight.data[gidx * og : (gidx + 1) * og].reshape(og, -1)
            if gw is not None:
                gw[gidx * og : (gidx + 1) * og] = (gr.T @ cols_by_group[gidx]).reshape(og, cg, k, k)
            if x.requires_grad:
                dcols = (gr @ wslice).reshape(n, ho, wo, cg, k, k).transpose(0, 3, 1, 2, 4, 5)
                for ki in range(k):
                    for kj in range(k):
                        gxp[
                            :,
                            gidx * cg : (gidx + 1) * cg,
                            ki : ki + stride * ho : stride,
                            kj : kj + stride * wo : stride,
                        ] += dcols[:, :, :, :, ki, kj]
        if x.requires_grad:
            gx = gxp[:, :, padding : padding + h, padding : padding + wd] if padding else gxp
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return (gx, gw) if bias is None else (gx, gw, gb)

    return _finish(out, inputs, bwd)


class Conv2d(Module):
    """Convolution layer owning weight (and optional bias) parameters.

    init: "trunc_normal" (std 0.02, biases zero) or "zero" (all zero).
    """

    def __init__(
        self,
        cin: int,
        cout: int,
        k: int,
        stride: int = 1,
        padding: int = 0,
        groups: int = 1,
        bias: bool = True,
        *,
        rng: np.random.Generator | None = None,
        init: str = "trunc_normal",
        dtype=np.float32,
    ):
        self.stride = stride
        self.padding = padding
        self.groups = groups
        shape = (cout, cin // groups, k, k)
        if init == "zero":
            w = np.zeros(shape, dtype=dtype)
        elif init == "trunc_normal":
            if rng is None:
                raise ValueError("trunc_normal init needs an rng")
            w = trunc_normal(rng, shape, dtype=dtype)
        else:
            raise ValueError(f"unknown init {init!r}")
        self.weight = parameter(w, dtype=dtype)
        self.bias = parameter(np.zeros(cout, dtype=dtype), dtype=dtype) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, self.stride, self.padding, self.groups)


# ---------------------------------------------------------------------------
# layer norm (channel-wise, NCHW) and GELU
# ---------------------------------------------------------------------------


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize each pixel's channel vector to zero mean / unit variance,
    then scale and shift per channel. x: [N, C, H, W]; gamma, beta: [C]."""
    if x.ndim != 4 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise ShapeMismatchError(
            f"layer_norm: x {x.shape}, gamma {gamma.shape}, beta {beta.shape}"
        )
    _count(LAYERNORM_FLOPS_PER_ELEM * x.size)
    c = x.shape[1]
    mu = x.data.mean(axis=1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]

    def bwd(g):
        gx = gg = gb = None
        if gamma.requires_grad:
            gg = (g * xhat).sum(axis=(0, 2, 3))
        if beta.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        if x.requires_grad:
            dxhat = g * gamma.data[None, :, None, None]
            m1 = dxhat.mean(axis=1, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=1, keepdims=True)
            gx = inv * (dxhat - m1 - xhat * m2)
        return gx, gg, gb

    return _finish(out, (x, gamma, beta), bwd)


class ChannelLayerNorm(Module):
    def __init__(self, channels: int, eps: float = 1e-6, dtype=np.float32):
        self.gamma = parameter(np.ones(channels, dtype=dtype), dtype=dtype)
        self.beta = parameter(np.zeros(channels, dtype=dtype), dtype=dtype)
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gamma, self.beta, self.eps)


def gelu(x: Tensor) -> Tensor:
    """Exact-erf GELU: x * Phi(x)."""
    _count(GELU_FLOPS_PER_ELEM * x.size)
    cdf = 0.5 * (1.0 + erf(x.data / np.sqrt(2.0, dtype=x.data.dtype)))
    out = (x.data * cdf).astype(x.data.dtype)

    def bwd(g):
        pdf = np.exp(-0.5 * x.data * x.data) / np.sqrt(2.0 * np.pi)
        return ((g * (cdf + x.data * pdf)).astype(x.data.dtype),)

    return _finish(out, (x,), bwd)


# ---------------------------------------------------------------------------
# bilinear grid sampling
# ---------------------------------------------------------------------------


def bilinear_sample(x: Tensor, coords: Tensor) -> Tensor:
    """Sample x at fractional positions with bilinear interpolation.

    x: [N, C, H, W]. coords: [N, Hg, Wg, 2] in normalized [-1, 1] with
    align-corners semantics (-1 is the center of the first pixel, +1 the
    center of the last); coords[..., 0] is the x (width) coordinate and
    coords[..., 1] the y (height) coordinate. Out-of-range positions clamp
    to the border. Returns [N, C, Hg, Wg].

    Positions within SNAP_EPS_PIXELS of the integer lattice snap onto it,
    making on-lattice sampling an exact gather in both f32 and f64.
    """
    if x.ndim != 4 or coords.ndim != 4 or coords.shape[-1] != 2 or coords.shape[0] != x.shape[0]:
        raise ShapeMismatchError(f"bilinear_sample: x {x.shape}, coords {coords.shape}")
    n, c, h, w = x.shape
    _, hg, wg, _ = coords.shape
    _count(BILINEAR_FLOPS_PER_ELEM * n * c * hg * wg + BILINEAR_FLOPS_PER_COORD * coords.size)

    half_w = (w - 1) / 2.0
    half_h = (h - 1) / 2.0
    px = (coords.data[..., 0] + 1.0) * half_w  # [N, Hg, Wg] pixel coords
    py = (coords.data[..., 1] + 1.0) * half_h
    rx, ry = np.round(px), np.round(py)
    px = np.where(np.abs(px - rx) < SNAP_EPS_PIXELS, rx, px)
    py = np.where(np.abs(py - ry) < SNAP_EPS_PIXELS, ry, py)
    px = np.clip(px, 0.0, w - 1.0)
    py = np.clip(py, 0.0, h - 1.0)
    # non-finite coords (diverged upstream) sample pixel 0 instead of
    # crashing the gather; the values themselves still carry the damage
    px = np.where(np.isfinite(px), px, 0.0)
    py = np.where(np.isfinite(py), py, 0.0)

    x0 = np.floor(px).astype(np.intp)
    y0 = np.floor(py).astype(np.intp)
    x0 = np.minimum(x0, w - 1)
    y0 = np.minimum(y0, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (px - x0).astype(x.data.dtype)  # in [0, 1)
    fy = (py - y0).astype(x.data.dtype)

    nidx = np.arange(n)[:, None, None]
    g00 = x.data[nidx, :, y0, x0]  # [N, Hg, Wg, C]
    g01 = x.data[nidx, :, y0, x1]
    g10 = x.data[nidx, :, y1, x0]
    g11 = x.data[nidx, :, y1, x1]

    w00 = ((1 - fx) * (1 - fy))[..., None]
    w01 = (fx * (1 - fy))[..., None]
    w10 = ((1 - fx) * fy)[..., None]
    w11 = (fx * fy)[..., None]
    out = w00 * g00 + w01 * g01 + w10 * g10 + w11 * g11  # [N, Hg, Wg, C]
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))

    def bwd(g):
        gx = gc = None
        gt = g.transpose(0, 2, 3, 1)  # [N, Hg, Wg, C]
        if x.requires_grad:
            gx = np.zeros(n * c * h * w, dtype=x.data.dtype)
            cidx = np.arange(c)[None, None, None, :]
            nfull = nidx[..., None]
            for yy, xx, ww in ((y0, x0, w00), (y0, x1, w01), (y1, x0, w10), (y1, x1, w11)):
                flat = ((nfull * c + cidx) * h + yy[..., None]) * w + xx[..., None]
                gx += np.bincount(
                    flat.ravel(), weights=(gt * ww).ravel(), minlength=gx.size
                ).astype(x.data.dtype)
            gx = gx.reshape(n, c, h, w)
        if coords.requires_grad:
            gsum00 = (gt * g00).sum(-1)
            gsum01 = (gt * g01).sum(-1)
            gsum10 = (gt * g10).sum(-1)
            gsum11 = (gt * g11).sum(-1)
            dpx = (1 - fy) * (gsum01 - gsum00) + fy * (gsum11 - gsum10)
            dpy = (1 - fx) * (gsum10 - gsum00) + fx * (gsum11 - gsum01)
            inside_x = ((px > 0) & (px < w - 1)) | (w == 1)
            inside_y = ((py > 0) & (py < h - 1)) | (h == 1)
            gc = np.stack(
                [dpx * inside_x * half_w, dpy * inside_y * half_h], axis=-1
            ).astype(coords.data.dtype)
        return gx, gc

    return _finish(out, (x, coords), bwd)


# ---------------------------------------------------------------------------
# pixel shuffle / unshuffle
# ---------------------------------------------------------------------------


def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    """[N, C, H, W] -> [N, C r^2, H/r, W/r]; output channel c*r^2 + i*r + j
    holds input pixels at offsets (i, j) within each r x r cell."""
    n, c, h, w = x.shape
    if h % r or w % r:
        raise ShapeMismatchError(f"pixel_unshuffle: {h}x{w} not divisible by r={r}")
    from .tensor import permute, reshape

    t = reshape(x, (n, c, h // r, r, w // r, r))
    t = permute(t, (0, 1, 3, 5, 2, 4))
    return reshape(t, (n, c * r * r, h // r, w // r))


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """Inverse of pixel_unshuffle: [N, C r^2, H, W] -> [N, C, H r, W r]."""
    n, c2, h, w = x.shape
    if c2 % (r * r):
        raise ShapeMismatchError(f"pixel_shuffle: channels {c2} not divisible by r^2={r * r}")
    from .tensor import permute, reshape

    c = c2 // (r * r)
    t = reshape(x, (n, c, r, r, h, w))
    t = permute(t, (0, 1, 4, 2, 5, 3))
    return reshape(t, (n, c, h * r, w * r))
