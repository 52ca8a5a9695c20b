"""Conv, norm, activation, resampling, bilinear sampling."""

import numpy as np
import pytest

from ddt.nn import (
    ChannelLayerNorm,
    Conv2d,
    bilinear_sample,
    conv2d,
    gelu,
    layer_norm,
    pixel_shuffle,
    pixel_unshuffle,
)
from ddt.tensor import FlopCounter, ShapeMismatchError, Tape, constant, parameter, tsum


def conv_reference(x, w, b, stride, padding, groups):
    """Plain-loop cross-correlation, the oracle every conv path must match."""
    n, cin, h, wd = x.shape
    cout, cg, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - k) // stride + 1
    wo = (wd + 2 * padding - k) // stride + 1
    out = np.zeros((n, cout, ho, wo), dtype=np.float64)
    per_group = cout // groups
    for ni in range(n):
        for co in range(cout):
            gi = co // per_group
            for yo in range(ho):
                for xo in range(wo):
                    patch = xp[
                        ni,
                        gi * cg : (gi + 1) * cg,
                        yo * stride : yo * stride + k,
                        xo * stride : xo * stride + k,
                    ]
                    out[ni, co, yo, xo] = float((patch * w[co]).sum())
            if b is not None:
                out[ni, co] += b[co]
    return out


@pytest.mark.parametrize(
    "cin,cout,k,stride,padding,groups",
    [
        (3, 5, 3, 1, 1, 1),
        (4, 4, 5, 2, 2, 4),   # depthwise
        (6, 8, 3, 1, 1, 2),   # grouped
        (3, 7, 1, 1, 0, 1),   # pointwise fast path
        (2, 3, 3, 2, 0, 1),
    ],
)
def test_conv_matches_reference(cin, cout, k, stride, padding, groups):
    rng = np.random.default_rng(hash((cin, cout, k, stride, padding, groups)) % 2**32)
    x = rng.normal(size=(2, cin, 8, 8))
    w = rng.normal(size=(cout, cin // groups, k, k))
    b = rng.normal(size=(cout,))
    out = conv2d(
        constant(x), constant(w), constant(b), stride=stride, padding=padding, groups=groups
    )
    expect = conv_reference(x, w, b, stride, padding, groups)
    np.testing.assert_allclose(out.numpy(), expect, rtol=0, atol=1e-12)


def test_conv_identity_kernel():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(1, 2, 6, 6)).astype(np.float32)
    w = np.zeros((2, 2, 3, 3), dtype=np.float32)
    w[0, 0, 1, 1] = 1.0
    w[1, 1, 1, 1] = 1.0
    out = conv2d(constant(x), constant(w), None, padding=1)
    np.testing.assert_array_equal(out.numpy(), x)


def test_conv_ones_kernel_interior():
    c = 0.7
    x = np.full((1, 1, 6, 6), c, dtype=np.float64)
    w = np.ones((1, 1, 3, 3), dtype=np.float64)
    out = conv2d(constant(x), constant(w), None, padding=1).numpy()
    np.testing.assert_allclose(out[0, 0, 1:-1, 1:-1], 9 * c, rtol=0, atol=1e-12)


def test_conv_geometry_error_names_shapes():
    x = constant(np.zeros((1, 3, 8, 8)))
    w = constant(np.zeros((4, 5, 3, 3)))  # expects 5 input channels
    with pytest.raises(ShapeMismatchError) as exc:
        conv2d(x, w, None, padding=1)
    msg = str(exc.value)
    assert "3" in msg and "5" in msg


def test_conv_output_extents():
    x = constant(np.zeros((1, 2, 8, 8)))
    w3 = constant(np.zeros((2, 2, 3, 3)))
    assert conv2d(x, w3, None, stride=1, padding=1).shape == (1, 2, 8, 8)
    w5 = constant(np.zeros((2, 2, 5, 5)))
    assert conv2d(x, w5, None, stride=2, padding=2).shape == (1, 2, 4, 4)


def test_conv_flops_exclude_bias():
    x = constant(np.zeros((1, 3, 8, 8), dtype=np.float32))
    w = constant(np.zeros((4, 3, 3, 3), dtype=np.float32))
    b = constant(np.zeros((4,), dtype=np.float32))
    with FlopCounter() as without:
        conv2d(x, w, None, padding=1)
    with FlopCounter() as with_bias:
        conv2d(x, w, b, padding=1)
    assert without.total == with_bias.total == 2 * 8 * 8 * 4 * 3 * 9


def test_conv2d_module_init():
    rng = np.random.default_rng(5)
    m = Conv2d(4, 8, 3, padding=1, rng=rng)
    assert m.weight.shape == (8, 4, 3, 3)
    assert np.all(m.bias.numpy() == 0.0)
    w = m.weight.numpy()
    assert np.abs(w).max() <= 2 * 0.02 + 1e-6  # truncated at 2 std
    assert w.std() == pytest.approx(0.02, rel=0.25)

    z = Conv2d(4, 8, 3, rng=rng, init="zero")
    assert np.all(z.weight.numpy() == 0.0)


def test_layer_norm_constant_input_gives_beta():
    x = constant(np.full((2, 5, 3, 3), 1.7, dtype=np.float32))
    ln = ChannelLayerNorm(5)
    np.testing.assert_allclose(ln(x).numpy(), 0.0, rtol=0, atol=1e-6)
    ln.beta.data[:] = 4.0
    np.testing.assert_allclose(ln(x).numpy(), 4.0, rtol=0, atol=1e-5)


def test_layer_norm_matches_reference():
    rng = np.random.default_rng(6)
    x = rng.normal(size=(2, 6, 4, 4))
    g = rng.normal(size=(6,))
    b = rng.normal(size=(6,))
    out = layer_norm(constant(x), constant(g), constant(b)).numpy()
    mu = x.mean(axis=1, keepdims=True)
    var = x.var(axis=1, keepdims=True)
    xhat = (x - mu) / np.sqrt(var + 1e-6)
    expect = g[None, :, None, None] * xhat + b[None, :, None, None]
    np.testing.assert_allclose(out, expect, rtol=0, atol=1e-12)


def test_layer_norm_shape_error():
    with pytest.raises(ShapeMismatchError):
        layer_norm(constant(np.zeros((1, 4, 2, 2))), constant(np.zeros(3)), constant(np.zeros(4)))


def test_gelu_endpoints():
    x = constant(np.array([0.0, 10.0], dtype=np.float64))
    out = gelu(x).numpy()
    assert out[0] == 0.0
    assert abs(out[1] - 10.0) < 1e-4


def test_gelu_negative_tail():
    out = gelu(constant(np.array([-10.0], dtype=np.float64))).numpy()
    assert abs(out[0]) < 1e-4


def test_bilinear_center_of_2x2():
    x = constant(np.array([[[[0.0, 1.0], [2.0, 3.0]]]]))
    coords = constant(np.zeros((1, 1, 1, 2)))
    assert bilinear_sample(x, coords).numpy()[0, 0, 0, 0] == pytest.approx(1.5)


def test_bilinear_corners_and_axis_order():
    # [..., 0] is x (width), [..., 1] is y (height)
    x = constant(np.array([[[[0.0, 1.0], [2.0, 3.0]]]]))
    coords = constant(np.array([[[[1.0, -1.0]]]]))  # right column, top row
    assert bilinear_sample(x, coords).numpy()[0, 0, 0, 0] == 1.0
    coords = constant(np.array([[[[-1.0, 1.0]]]]))  # left column, bottom row
    assert bilinear_sample(x, coords).numpy()[0, 0, 0, 0] == 2.0


def test_bilinear_lattice_exact():
    rng = np.random.default_rng(12)
    x = rng.normal(size=(1, 3, 5, 7)).astype(np.float32)
    ys, xs = np.meshgrid(np.arange(5), np.arange(7), indexing="ij")
    nx = 2.0 * xs / 6.0 - 1.0
    ny = 2.0 * ys / 4.0 - 1.0
    coords = np.stack([nx, ny], axis=-1)[None].astype(np.float32)
    out = bilinear_sample(constant(x), constant(coords)).numpy()
    np.testing.assert_array_equal(out, x)


def test_bilinear_snaps_near_lattice():
    x = constant(np.array([[[[0.0, 1.0], [2.0, 3.0]]]], dtype=np.float32))
    # 1e-5 pixels off the top-left corner: inside the snap radius
    eps = 1e-5 * 2.0  # normalized units per pixel on a 2-wide axis: 2/(w-1) = 2
    coords = constant(np.array([[[[-1.0 + eps, -1.0 + eps]]]], dtype=np.float32))
    assert bilinear_sample(x, coords).numpy()[0, 0, 0, 0] == 0.0


def test_bilinear_border_clamp():
    x = constant(np.array([[[[0.0, 1.0], [2.0, 3.0]]]]))
    coords = constant(np.array([[[[5.0, 5.0]]]]))  # far outside: clamps to (1,1)
    assert bilinear_sample(x, coords).numpy()[0, 0, 0, 0] == 3.0


def test_bilinear_constant_image():
    x = constant(np.full((1, 2, 4, 4), 0.25))
    rng = np.random.default_rng(13)
    coords = constant(rng.uniform(-1, 1, size=(1, 3, 3, 2)))
    np.testing.assert_allclose(
        bilinear_sample(x, coords).numpy(), 0.25, rtol=0, atol=1e-12
    )


def test_bilinear_interpolation_weights():
    # fractional sample inside a known cell, compare against hand formula
    img = np.arange(12, dtype=np.float64).reshape(1, 1, 3, 4)
    px, py = 1.25, 0.5
    nx = 2 * px / 3.0 - 1.0
    ny = 2 * py / 2.0 - 1.0
    out = bilinear_sample(
        constant(img), constant(np.array([[[[nx, ny]]]]))
    ).numpy()[0, 0, 0, 0]
    v00, v01 = img[0, 0, 0, 1], img[0, 0, 0, 2]
    v10, v11 = img[0, 0, 1, 1], img[0, 0, 1, 2]
    expect = (v00 * 0.75 + v01 * 0.25) * 0.5 + (v10 * 0.75 + v11 * 0.25) * 0.5
    assert out == pytest.approx(expect, abs=1e-12)


def test_bilinear_shape_error():
    with pytest.raises(ShapeMismatchError):
        bilinear_sample(constant(np.zeros((1, 1, 4, 4))), constant(np.zeros((1, 2, 3))))


def test_pixel_unshuffle_channel_order():
    x = constant(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]))
    out = pixel_unshuffle(x, 2)
    assert out.shape == (1, 4, 1, 1)
    np.testing.assert_array_equal(out.numpy().ravel(), [1.0, 2.0, 3.0, 4.0])


def test_pixel_shuffle_round_trip():
    rng = np.random.default_rng(14)
    x = rng.normal(size=(2, 3, 8, 8)).astype(np.float32)
    t = constant(x)
    back = pixel_shuffle(pixel_unshuffle(t, 2), 2)
    np.testing.assert_array_equal(back.numpy(), x)


def test_pixel_shuffle_gradient_is_permutation():
    x = parameter(
        np.random.default_rng(15).normal(size=(1, 4, 2, 2)), dtype=np.float64
    )
    w = np.random.default_rng(16).normal(size=(1, 1, 4, 4))
    with Tape() as tape:
        out = pixel_shuffle(x, 2)
        loss = tsum(out * w)
    tape.backward(loss)
    # shuffling the cotangent back must reproduce the weights
    np.testing.assert_array_equal(
        pixel_unshuffle(constant(w), 2).numpy(), x.grad
    )
