import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from srlab import metrics
from srlab.errors import ConfigError, ShapeError
from srlab.resample import (
    BicubicDownUp,
    GaussianDecimateUp,
    ResizeSpec,
    cubic_kernel,
    degrade,
    format_mode,
    gaussian_blur,
    gaussian_kernel1d,
    modcrop,
    parse_mode,
    resize_bicubic,
    resize_weights,
)

from conftest import smooth_image


def test_cubic_kernel_values():
    assert cubic_kernel(0.0) == 1.0
    assert cubic_kernel(1.0) == 0.0
    assert cubic_kernel(2.0) == 0.0
    assert cubic_kernel(0.5) == 0.5625
    assert cubic_kernel(3.0) == 0.0
    # far branch by hand: a|x|^3 - 5a|x|^2 + 8a|x| - 4a at x=1.5, a=-0.5
    assert cubic_kernel(1.5) == pytest.approx(-0.0625, abs=1e-15)


@given(st.floats(-3, 3))
def test_cubic_kernel_symmetric(x):
    assert cubic_kernel(x) == cubic_kernel(-x)


@pytest.mark.parametrize("n_in,scale", [(10, 3), (9, Fraction(1, 3)), (7, 2), (16, Fraction(1, 4)), (5, 1)])
def test_resize_weights_rows_sum_to_one(n_in, scale):
    n_out = round(n_in * scale)
    mat = resize_weights(n_in, n_out, scale)
    np.testing.assert_allclose(mat.sum(axis=1), 1.0, rtol=0, atol=1e-12)


@pytest.mark.parametrize("scale", [2, 3, Fraction(1, 2), Fraction(1, 3), Fraction(3, 2)])
def test_constant_image_preserved(scale):
    img = np.full((2, 12, 9), 0.37)
    out = resize_bicubic(img, ResizeSpec(scale))
    # output sizes round half up
    assert out.shape == (2, math.floor(12 * scale + Fraction(1, 2)), math.floor(9 * scale + Fraction(1, 2)))
    np.testing.assert_allclose(out, 0.37, atol=1e-9)


def test_identity_scale(rng):
    img = rng.random((3, 7, 5))
    np.testing.assert_allclose(resize_bicubic(img, ResizeSpec(1)), img, rtol=0, atol=1e-15)


def test_ramp_interior_exact():
    ramp = np.array([0.0, 1.0, 2.0, 3.0])[None, None, :]
    out = resize_bicubic(ramp, ResizeSpec(2))[0, 0]
    assert out.shape == (8,)
    # output pixels 3 and 4 sample u = 1.25 and 1.75, whose four taps all lie inside the ramp
    assert out[3] == pytest.approx(1.25, abs=1e-12)
    assert out[4] == pytest.approx(1.75, abs=1e-12)


def test_resize_output_size_rounding():
    img = np.zeros((1, 10, 7))
    assert resize_bicubic(img, ResizeSpec(Fraction(1, 3))).shape == (1, 3, 2)
    assert resize_bicubic(img, ResizeSpec(1.5)).shape == (1, 15, 11)
    with pytest.raises(ShapeError):
        resize_bicubic(np.zeros((1, 1, 1)), ResizeSpec(Fraction(1, 3)))
    with pytest.raises(ConfigError):
        ResizeSpec(0)


@pytest.mark.parametrize(
    "scale,margin",
    [(3, 7), (2, 5), (4, 9), (Fraction(1, 2), 3), (Fraction(1, 3), 3), (Fraction(1, 4), 3)],
)
def test_matches_pillow_interior(rng, scale, margin):
    # Pillow's float-mode bicubic uses the same kernel, pixel-center mapping and
    # antialias widening; it renormalizes clipped windows instead of replicating
    # edges, so only the interior is compared.
    x = rng.random((48, 60)).astype(np.float32)
    h, w = round(48 * scale), round(60 * scale)
    ours = resize_bicubic(x[None].astype(np.float64), ResizeSpec(scale))[0]
    ref = np.asarray(Image.fromarray(x, mode="F").resize((w, h), Image.BICUBIC), dtype=np.float64)
    np.testing.assert_allclose(ours[margin:-margin, margin:-margin], ref[margin:-margin, margin:-margin], atol=1e-6)


def test_no_antialias_downscale_is_point_sampling_like(rng):
    # without antialiasing the kernel is not widened: each output touches 4 taps only
    mat = resize_weights(12, 4, Fraction(1, 3), antialias=False)
    assert ((mat != 0).sum(axis=1) <= 4).all()
    wide = resize_weights(12, 4, Fraction(1, 3), antialias=True)
    assert ((wide != 0).sum(axis=1) > 4).any()


# ---------------------------------------------------------------- gaussian


def test_gaussian_constant():
    img = np.full((1, 9, 9), 0.6)
    np.testing.assert_allclose(gaussian_blur(img, 1.3), 0.6, atol=1e-9)


def test_gaussian_tiny_sigma_is_identity(rng):
    img = rng.random((2, 8, 8))
    np.testing.assert_allclose(gaussian_blur(img, 0.05), img, atol=1e-6)


def test_gaussian_impulse_matches_dense_2d():
    sigma = 0.55
    img = np.zeros((1, 9, 9))
    img[0, 4, 4] = 1.0
    out = gaussian_blur(img, sigma)[0]
    # direct 2-D summation with an unseparated kernel
    r = math.ceil(3 * sigma)
    yy, xx = np.mgrid[-r : r + 1, -r : r + 1]
    k2 = np.exp(-(yy**2 + xx**2) / (2 * sigma**2))
    k2 /= k2.sum()
    dense = np.zeros((9, 9))
    for y in range(9):
        for x in range(9):
            for dy in range(-r, r + 1):
                for dx in range(-r, r + 1):
                    sy = min(max(y + dy, 0), 8)
                    sx = min(max(x + dx, 0), 8)
                    dense[y, x] += k2[dy + r, dx + r] * img[0, sy, sx]
    np.testing.assert_allclose(out, dense, atol=1e-15)
    k1 = gaussian_kernel1d(sigma)
    assert out[4, 4] == pytest.approx(k1[r] ** 2, rel=1e-14)


def test_gaussian_errors():
    with pytest.raises(ConfigError):
        gaussian_blur(np.zeros((1, 4, 4)), 0)
    with pytest.raises(ConfigError):
        GaussianDecimateUp(-1.0)


# ---------------------------------------------------------------- modcrop


@pytest.mark.parametrize("shape,scale,expect", [((100, 100), 3, (99, 99)), ((99, 99), 3, (99, 99)), ((7, 11), 4, (4, 8))])
def test_modcrop(shape, scale, expect):
    img = np.zeros((1,) + shape)
    assert modcrop(img, scale).shape[1:] == expect


def test_modcrop_keeps_top_left(rng):
    img = rng.random((1, 10, 10))
    np.testing.assert_array_equal(modcrop(img, 3), img[:, :9, :9])


def test_modcrop_errors():
    with pytest.raises(ShapeError):
        modcrop(np.zeros((1, 2, 5)), 3)
    with pytest.raises(ConfigError):
        modcrop(np.zeros((1, 5, 5)), 0)


# ---------------------------------------------------------------- degrade


@pytest.mark.parametrize("mode", [BicubicDownUp(), GaussianDecimateUp(0.55)])
@pytest.mark.parametrize("scale", [2, 3, 4])
def test_degrade_constant_and_shape(mode, scale):
    img = np.full((1, 12 * scale, 6 * scale), 0.25)
    out = degrade(img, scale, mode)
    assert out.shape == img.shape
    np.testing.assert_allclose(out, 0.25, atol=1e-9)


def test_degrade_scale_one_identity(rng):
    img = rng.random((1, 7, 9))
    np.testing.assert_allclose(degrade(img, 1, BicubicDownUp()), img, atol=1e-14)


def test_degrade_gaussian_composition():
    checker = (np.indices((6, 6)).sum(axis=0) % 2).astype(np.float64)[None]
    out = degrade(checker, 3, GaussianDecimateUp(0.55))
    lr = gaussian_blur(checker, 0.55)[:, 0::3, 0::3]
    expect = resize_bicubic(lr, ResizeSpec(3, antialias=False))
    assert lr.shape == (1, 2, 2)
    np.testing.assert_allclose(out, expect, rtol=0, atol=0)


def test_degrade_bicubic_composition(rng):
    img = rng.random((1, 12, 15))
    lr = resize_bicubic(img, ResizeSpec(Fraction(1, 3), antialias=True))
    expect = resize_bicubic(lr, ResizeSpec(3, antialias=False))
    np.testing.assert_array_equal(degrade(img, 3), expect)


def test_degrade_rejects_indivisible():
    with pytest.raises(ShapeError):
        degrade(np.zeros((1, 10, 9)), 3)


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), scale=st.sampled_from([2, 3, 4]))
def test_band_limited_roundtrip_high_psnr(seed, scale):
    rng = np.random.default_rng(seed)
    img = gaussian_blur(smooth_image(rng, 96, 96, blur=40), 4.0)
    out = degrade(img, scale)
    assert metrics.psnr(metrics.shave_border(out, 8), metrics.shave_border(img, 8)) > 40


def test_mode_parsing():
    assert parse_mode("bicubic") == BicubicDownUp()
    assert parse_mode("gaussian:0.55") == GaussianDecimateUp(0.55)
    assert parse_mode(format_mode(GaussianDecimateUp(1.25))) == GaussianDecimateUp(1.25)
    assert format_mode(BicubicDownUp()) == "bicubic"
    assert parse_mode("gaussian") == GaussianDecimateUp(0.55)
    for bad in ("lanczos", "gaussian:0", "gaussian:-1", "gaussian:x"):
        with pytest.raises(ConfigError):
            parse_mode(bad)
