"""Central finite-difference verification of every backward rule.

Each registered check builds a tiny f64 problem, takes the tape gradient of
a scalar readout, then re-evaluates the readout under +-eps perturbations
of sampled parameter entries. The reported number is

    max |analytic - numeric| / (max(|analytic|, |numeric|)_inf + 1e-12)

over all sampled entries of all checked tensors. Checks that sample
positions (bilinear, deformable attention) draw configurations away from
the interpolation lattice, where the function is not differentiable.

Seeds are fixed per check name, so the suite is deterministic.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from . import nn
from .attention import DeformableAttention, DeformAttnConfig, multi_head_attention
from .blocks import BlockConfig, DualBranchAttention, FeedForward, TransformerBlock
from .network import NetworkConfig, build
from .tensor import (
    Tape,
    Tensor,
    clip,
    concat,
    constant,
    matmul,
    mul,
    narrow,
    parameter,
    permute,
    reshape,
    softmax,
    split,
    tabs,
    tanh,
    sigmoid,
    tmean,
    tsum,
)
from .training import l1_loss

__all__ = ["CheckResult", "EPS", "run_suite", "module_names", "fd_check"]

EPS = 1e-5
SUITE_SEED = 20240917


@dataclass
class CheckResult:
    module: str
    name: str
    rel_err: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.rel_err <= self.tol

    def line(self) -> str:
        mark = "pass" if self.passed else "FAIL"
        return f"[{mark}] {self.module}/{self.name}: rel_err={self.rel_err:.3e} tol={self.tol:.0e}"


class _Readout:
    """Fixed random linear functional of the output; makes the scalar loss
    sensitive to every output entry without symmetric cancellation."""

    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.w: np.ndarray | None = None

    def __call__(self, out: Tensor) -> Tensor:
        if self.w is None:
            self.w = self.rng.uniform(-1.0, 1.0, size=out.shape)
        return tsum(mul(out, constant(self.w, like=out)))


def _seed(name: str) -> list[int]:
    return [SUITE_SEED, zlib.crc32(name.encode())]


def _uniform(rng, shape, lo=-1.0, hi=1.0) -> Tensor:
    return parameter(rng.uniform(lo, hi, size=shape), dtype=np.float64)


def fd_check(module: str, name: str, build_fn, tol: float, samples: int = 4) -> CheckResult:
    """build_fn(rng) -> (f, specs); f() returns a scalar Tensor, specs is a
    list of Tensors (sample `samples` entries each) or (Tensor, [flat
    indices]) pairs pinning the exact entries to probe."""
    rng = np.random.default_rng(_seed(f"{module}/{name}"))
    f, specs = build_fn(rng)

    with Tape() as tape:
        loss = f()
    tape.backward(loss)

    analytic, numeric = [], []
    for spec in specs:
        if isinstance(spec, tuple):
            p, idxs = spec
        else:
            p, idxs = spec, None
        if idxs is None:
            k = min(samples, p.data.size)
            idxs = rng.choice(p.data.size, size=k, replace=False)
        if p.grad is None:
            raise RuntimeError(f"{module}/{name}: checked tensor received no gradient")
        a_flat = p.grad.reshape(-1)
        for idx in idxs:
            pos = np.unravel_index(int(idx), p.data.shape)
            orig = p.data[pos]
            p.data[pos] = orig + EPS
            lp = float(f().item())
            p.data[pos] = orig - EPS
            lm = float(f().item())
            p.data[pos] = orig
            analytic.append(float(a_flat[int(idx)]))
            numeric.append((lp - lm) / (2.0 * EPS))

    a = np.asarray(analytic)
    n = np.asarray(numeric)
    scale = max(np.max(np.abs(a)), np.max(np.abs(n))) + 1e-12
    rel = float(np.max(np.abs(a - n)) / scale)
    return CheckResult(module, name, rel, tol)


def _all_params(module: nn.Module) -> list[Tensor]:
    return [p for _, p in module.named_parameters()]


def _nudge_zero_params(module: nn.Module, rng, scale: float = 0.1) -> None:
    # zero-initialized layers (offset heads, output conv, biases) give
    # identically-zero gradients upstream; perturb them so every checked
    # path is exercised
    for _, p in module.named_parameters():
        if not p.data.any():
            p.data += scale * rng.standard_normal(p.data.shape)


# ---------------------------------------------------------------------------
# tensor ops
# ---------------------------------------------------------------------------


def _build_binary(op):
    def build(rng):
        a = _uniform(rng, (2, 3, 4))
        b = _uniform(rng, (3, 1))  # broadcast across leading/size-1 axes
        ro = _Readout(rng)
        return (lambda: ro(op(a, b))), [a, b]

    return build


def _build_matmul(rng):
    a = _uniform(rng, (2, 3, 4))
    b = _uniform(rng, (2, 4, 5))
    c = _uniform(rng, (5, 3))
    ro = _Readout(rng)
    return (lambda: ro(matmul(matmul(a, b), c))), [a, b, c]


def _build_softmax(rng):
    x = _uniform(rng, (3, 4, 6), -2.0, 2.0)
    ro = _Readout(rng)
    return (lambda: ro(softmax(x, axis=-1))), [x]


def _build_unary(op, lo=-1.0, hi=1.0):
    def build(rng):
        x = _uniform(rng, (3, 5, 4), lo, hi)
        ro = _Readout(rng)
        return (lambda: ro(op(x))), [x]

    return build


def _build_abs(rng):
    data = rng.uniform(-1.0, 1.0, size=(4, 5))
    data += np.where(data >= 0, 0.2, -0.2)  # keep away from the kink at 0
    x = parameter(data, dtype=np.float64)
    ro = _Readout(rng)
    return (lambda: ro(tabs(x))), [x]


def _build_clip(rng):
    data = rng.uniform(-1.0, 1.0, size=(6, 6))
    near = np.abs(np.abs(data) - 0.5) < 1e-3  # keep away from clamp kinks
    data[near] += 5e-3
    x = parameter(data, dtype=np.float64)
    ro = _Readout(rng)
    return (lambda: ro(clip(x, -0.5, 0.5))), [x]


def _build_reductions(rng):
    x = _uniform(rng, (3, 4, 5))
    ro1, ro2 = _Readout(rng), _Readout(rng)
    return (lambda: ro1(tsum(x, axis=(0, 2))) + ro2(tmean(x, axis=1, keepdims=True))), [x]


def _build_movement(rng):
    x = _uniform(rng, (2, 6, 4))
    ro1, ro2 = _Readout(rng), _Readout(rng)

    def f():
        lo, hi = split(x, 2, axis=1)
        y = concat([hi, lo], axis=1)
        z = permute(reshape(y, (2, 6, 2, 2)), (0, 2, 1, 3))
        return ro1(z) + ro2(narrow(x, 2, 1, 2))

    return f, [x]


# ---------------------------------------------------------------------------
# nn primitives
# ---------------------------------------------------------------------------


def _build_conv(cin, cout, k, stride, padding, groups, size):
    def build(rng):
        x = _uniform(rng, (2, cin, size, size))
        conv = nn.Conv2d(
            cin, cout, k, stride=stride, padding=padding, groups=groups,
            rng=rng, dtype=np.float64,
        )
        ro = _Readout(rng)
        return (lambda: ro(conv(x))), [x, conv.weight, conv.bias]

    return build


def _build_layer_norm(rng):
    x = _uniform(rng, (2, 5, 3, 3))
    g = _uniform(rng, (5,), 0.5, 1.5)
    b = _uniform(rng, (5,), -0.5, 0.5)
    ro = _Readout(rng)
    return (lambda: ro(nn.layer_norm(x, g, b))), [x, g, b]


def _build_gelu(rng):
    x = _uniform(rng, (4, 6), -2.0, 2.0)
    ro = _Readout(rng)
    return (lambda: ro(nn.gelu(x))), [x]


def _build_shuffle(rng):
    x = _uniform(rng, (2, 8, 4, 4))
    ro1, ro2 = _Readout(rng), _Readout(rng)
    return (
        lambda: ro1(nn.pixel_unshuffle(x, 2)) + ro2(nn.pixel_shuffle(x, 2)),
        [x],
    )


def _build_bilinear(rng):
    x = _uniform(rng, (2, 3, 7, 9))
    # fractional positions well inside cells: no lattice kinks, no border
    py = rng.integers(0, 6, size=(2, 4, 5)) + rng.uniform(0.15, 0.85, size=(2, 4, 5))
    px = rng.integers(0, 8, size=(2, 4, 5)) + rng.uniform(0.15, 0.85, size=(2, 4, 5))
    cy = 2.0 * py / 6.0 - 1.0
    cx = 2.0 * px / 8.0 - 1.0
    coords = parameter(np.stack([cx, cy], axis=-1), dtype=np.float64)
    ro = _Readout(rng)
    return (lambda: ro(nn.bilinear_sample(x, coords))), [x, coords]


# ---------------------------------------------------------------------------
# attention / blocks / network
# ---------------------------------------------------------------------------


def _build_mha(rng):
    q = _uniform(rng, (2, 8, 3, 4))
    k = _uniform(rng, (2, 8, 2, 3))
    v = _uniform(rng, (2, 8, 2, 3))
    ro = _Readout(rng)
    return (lambda: ro(multi_head_attention(q, k, v, heads=2))), [q, k, v]


def _build_deformable(rng):
    x = _uniform(rng, (1, 8, 8, 8), -0.5, 0.5)
    attn = DeformableAttention(DeformAttnConfig(8, 2, gamma=2), rng=rng, dtype=np.float64)
    _nudge_zero_params(attn, rng, scale=0.05)
    ro = _Readout(rng)
    return (lambda: ro(attn(x))), [x] + _all_params(attn)


def _build_ffn(rng):
    x = _uniform(rng, (1, 6, 6, 6))
    ffn = FeedForward(6, 2, rng=rng, dtype=np.float64)
    ro = _Readout(rng)
    return (lambda: ro(ffn(x))), [x] + _all_params(ffn)


def _build_dda(rng):
    cfg = BlockConfig(channels=4, heads=1, p_local=4, p_global=4, gamma=2, ffn_expansion=2)
    x = _uniform(rng, (1, 4, 8, 8), -0.5, 0.5)
    dda = DualBranchAttention(cfg, rng=rng, dtype=np.float64)
    _nudge_zero_params(dda, rng, scale=0.05)
    ro = _Readout(rng)
    return (lambda: ro(dda(x))), [x] + _all_params(dda)


def _build_block(rng):
    cfg = BlockConfig(channels=4, heads=1, p_local=4, p_global=4, gamma=2, ffn_expansion=2)
    x = _uniform(rng, (1, 4, 8, 8), -0.5, 0.5)
    block = TransformerBlock(cfg, rng=rng, dtype=np.float64)
    _nudge_zero_params(block, rng, scale=0.05)
    ro = _Readout(rng)
    return (lambda: ro(block(x))), [x] + _all_params(block)


def _build_network(rng):
    cfg = NetworkConfig(
        base_channels=4,
        encoder_blocks=(1, 1, 1),
        bottleneck_blocks=1,
        decoder_blocks=(1, 1, 1),
        refinement_blocks=1,
        heads=(1, 1, 2, 2),
        p_local=2,
        p_global=2,
        gamma=2,
        ffn_expansion=2,
        dtype="f64",
    )
    model = build(cfg, seed=int(rng.integers(2**31)))
    _nudge_zero_params(model, rng, scale=0.05)
    noisy = Tensor(rng.uniform(0.0, 1.0, size=(1, 3, 16, 16)))
    target = Tensor(rng.uniform(0.0, 1.0, size=(1, 3, 16, 16)))
    tensors = _all_params(model)
    picks = rng.choice(len(tensors), size=10)
    specs = [(tensors[t], [int(rng.integers(tensors[t].data.size))]) for t in picks]
    return (lambda: l1_loss(model(noisy), target)), specs


_CHECKS: list[tuple[str, str, object, float]] = [
    ("tensor", "add", _build_binary(lambda a, b: a + b), 1e-6),
    ("tensor", "sub", _build_binary(lambda a, b: a - b), 1e-6),
    ("tensor", "mul", _build_binary(mul), 1e-6),
    ("tensor", "matmul", _build_matmul, 1e-6),
    ("tensor", "softmax", _build_softmax, 1e-6),
    ("tensor", "tanh", _build_unary(tanh, -2.0, 2.0), 1e-6),
    ("tensor", "sigmoid", _build_unary(sigmoid, -3.0, 3.0), 1e-6),
    ("tensor", "abs", _build_abs, 1e-6),
    ("tensor", "clip", _build_clip, 1e-6),
    ("tensor", "reductions", _build_reductions, 1e-6),
    ("tensor", "movement", _build_movement, 1e-6),
    ("nn", "conv3x3", _build_conv(3, 4, 3, 1, 1, 1, 6), 1e-5),
    ("nn", "conv1x1", _build_conv(4, 6, 1, 1, 0, 1, 5), 1e-5),
    ("nn", "conv_depthwise", _build_conv(4, 4, 5, 2, 2, 4, 8), 1e-5),
    ("nn", "conv_grouped", _build_conv(4, 6, 3, 1, 1, 2, 6), 1e-5),
    ("nn", "layer_norm", _build_layer_norm, 1e-5),
    ("nn", "gelu", _build_gelu, 1e-5),
    ("nn", "pixel_shuffle", _build_shuffle, 1e-6),
    ("nn", "bilinear", _build_bilinear, 1e-4),
    ("attention", "multi_head", _build_mha, 1e-4),
    ("attention", "deformable", _build_deformable, 1e-4),
    ("blocks", "ffn", _build_ffn, 1e-4),
    ("blocks", "dual_branch", _build_dda, 1e-4),
    ("blocks", "transformer_block", _build_block, 1e-4),
    ("network", "toy_l1", _build_network, 1e-3),
]


def module_names() -> list[str]:
    seen = []
    for module, _, _, _ in _CHECKS:
        if module not in seen:
            seen.append(module)
    return seen


def run_suite(module: str | None = None) -> list[CheckResult]:
    if module is not None and module not in module_names():
        raise ValueError(f"unknown gradcheck module {module!r} (choose from {module_names()})")
    results = []
    for mod, name, build_fn, tol in _CHECKS:
        if module is not None and mod != module:
            continue
        results.append(fd_check(mod, name, build_fn, tol))
    return results
