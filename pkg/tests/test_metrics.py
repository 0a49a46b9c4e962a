import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.signal import correlate2d
from skimage.metrics import structural_similarity

from srlab import metrics
from srlab.errors import ShapeError
from srlab.metrics import msssim, psnr, shave_border, ssim

from conftest import smooth_image


def test_psnr_identical_is_inf(rng):
    x = rng.random((1, 8, 8))
    assert psnr(x, x) == math.inf


def test_psnr_one_level():
    a = np.full((1, 10, 10), 100 / 255)
    b = np.full((1, 10, 10), 101 / 255)
    assert psnr(a, b) == pytest.approx(48.1308, abs=1e-3)
    assert psnr(a, b) == pytest.approx(20 * math.log10(255), abs=1e-9)


def test_psnr_shape_mismatch():
    with pytest.raises(ShapeError):
        psnr(np.zeros((1, 4, 4)), np.zeros((1, 4, 5)))


def test_psnr_monotone_in_noise(rng):
    x = rng.random((1, 32, 32)) * 0.5 + 0.25
    noise = rng.uniform(-1, 1, x.shape)
    values = [psnr(x + amp * noise, x) for amp in (0.001, 0.005, 0.01, 0.05, 0.1)]
    assert all(a > b for a, b in zip(values, values[1:]))


# ---------------------------------------------------------------- ssim


def test_ssim_self_is_one(rng):
    x = rng.random((1, 20, 24))
    assert ssim(x, x) == 1.0
    assert msssim(np.tile(x, (1, 10, 8)), np.tile(x, (1, 10, 8))) == 1.0


@pytest.mark.parametrize("u,v", [(0.2, 0.7), (0.0, 1.0), (0.5, 0.51)])
def test_ssim_constant_images_closed_form(u, v):
    a = np.full((1, 16, 16), u)
    b = np.full((1, 16, 16), v)
    c1 = (0.01 * 255) ** 2
    m1, m2 = 255 * u, 255 * v
    expect = (2 * m1 * m2 + c1) / (m1**2 + m2**2 + c1)
    assert ssim(a, b) == pytest.approx(expect, rel=1e-12)


def test_ssim_matches_scikit_image(rng):
    a = smooth_image(rng, 40, 48)[0]
    b = np.clip(a + rng.normal(0, 0.05, a.shape), 0, 1)
    ref = structural_similarity(
        a * 255, b * 255, gaussian_weights=True, sigma=1.5, use_sample_covariance=False, data_range=255
    )
    assert ssim(a, b) == pytest.approx(ref, abs=1e-9)


def test_ssim_too_small():
    with pytest.raises(ShapeError):
        ssim(np.zeros((1, 10, 20)), np.zeros((1, 10, 20)))


def _reference_msssim(a, b, levels=5):
    """Straightforward multi-scale SSIM with scipy correlation as an oracle."""
    a, b = a * 255.0, b * 255.0
    x = np.arange(11) - 5.0
    g = np.exp(-(x**2) / (2 * 1.5**2))
    win = np.outer(g, g) / np.outer(g, g).sum()
    c1, c2 = (0.01 * 255) ** 2, (0.03 * 255) ** 2
    w = np.array(metrics.MSSSIM_WEIGHTS[:levels])
    w /= w.sum()
    out = 1.0
    for lvl in range(levels):
        f = lambda img: correlate2d(img, win, mode="valid")  # noqa: E731
        ma, mb = f(a), f(b)
        va = f(a * a) - ma**2
        vb = f(b * b) - mb**2
        cov = f(a * b) - ma * mb
        cs = (2 * cov + c2) / (va + vb + c2)
        if lvl == levels - 1:
            lum = (2 * ma * mb + c1) / (ma**2 + mb**2 + c1)
            out *= np.mean(lum * cs) ** w[lvl]
        else:
            out *= np.mean(cs) ** w[lvl]
            h, wd = a.shape[0] // 2 * 2, a.shape[1] // 2 * 2
            a = a[:h, :wd].reshape(h // 2, 2, wd // 2, 2).mean(axis=(1, 3))
            b = b[:h, :wd].reshape(h // 2, 2, wd // 2, 2).mean(axis=(1, 3))
    return out


def test_msssim_matches_reference(rng):
    a = smooth_image(rng, 180, 190)[0]
    b = np.clip(a + rng.normal(0, 0.03, a.shape), 0, 1)
    assert msssim(a, b) == pytest.approx(_reference_msssim(a, b), rel=1e-10)


def test_msssim_single_level_equals_ssim(rng):
    a = rng.random((1, 30, 30))
    b = np.clip(a + rng.normal(0, 0.1, a.shape), 0, 1)
    assert msssim(a, b, levels=1) == pytest.approx(ssim(a, b), abs=1e-9)


def test_msssim_fallback_levels(rng):
    a = smooth_image(rng, 50, 60)
    b = np.clip(a + rng.normal(0, 0.05, a.shape), 0, 1)
    value, used = msssim(a, b, return_levels=True)
    assert used == 3  # 50 -> 25 -> 12 -> 6: three levels fit the 11x11 window
    assert value == pytest.approx(_reference_msssim(a[0], b[0], levels=3), rel=1e-10)
    with pytest.raises(ShapeError):
        msssim(np.zeros((1, 8, 8)), np.zeros((1, 8, 8)))


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), noise=st.floats(0.01, 0.3))
def test_symmetry(seed, noise):
    rng = np.random.default_rng(seed)
    a = rng.random((1, 48, 40))
    b = np.clip(a + rng.normal(0, noise, a.shape), 0, 1)
    assert ssim(a, b) == ssim(b, a)
    assert msssim(a, b) == msssim(b, a)
    assert psnr(a, b) == psnr(b, a)


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_ssim_bounded(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.random((1, 16, 16)), rng.random((1, 16, 16))
    assert -1.0 <= ssim(a, b) <= 1.0


# ---------------------------------------------------------------- shave


def test_shave_border():
    x = np.arange(21 * 21, dtype=float).reshape(1, 21, 21)
    np.testing.assert_array_equal(shave_border(x, 0), x)
    out = shave_border(x, 3)
    assert out.shape == (1, 15, 15)
    assert out[0, 0, 0] == x[0, 3, 3]
    # 2 * 11 >= 21, so shaving half the side or more is rejected
    for bad in (11, 20):
        with pytest.raises(ShapeError):
            shave_border(x, bad)
    with pytest.raises(ShapeError):
        shave_border(x, -1)
