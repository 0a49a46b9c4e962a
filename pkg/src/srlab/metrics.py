"""Full-reference quality metrics: PSNR, SSIM and MS-SSIM.

All functions take tensors with intensities in [0, 1] and evaluate them on
the 8-bit [0, 255] scale, so constants match the usual published values.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError

PEAK = 255.0
SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
MSSSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    return a * PEAK, b * PEAK


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` for identical inputs."""
    a, b = _pair(a, b)
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(PEAK * PEAK / mse)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2
    g = np.exp(-(x * x) / (2 * sigma * sigma))
    w = np.outer(g, g)
    return w / w.sum()


def _filter_valid(img: np.ndarray, win: np.ndarray) -> np.ndarray:
    k = win.shape[0]
    return np.tensordot(sliding_window_view(img, (k, k)), win, axes=([2, 3], [0, 1]))


def _ssim_maps(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Luminance and contrast-structure maps of two 2-D images (valid region)."""
    win = gaussian_window()
    c1 = (SSIM_K1 * PEAK) ** 2
    c2 = (SSIM_K2 * PEAK) ** 2
    mu_a = _filter_valid(a, win)
    mu_b = _filter_valid(b, win)
    # products are formed symmetrically so ssim(a, b) == ssim(b, a) bit for bit
    mu_ab = mu_a * mu_b
    mu_aa, mu_bb = mu_a * mu_a, mu_b * mu_b
    var_a = _filter_valid(a * a, win) - mu_aa
    var_b = _filter_valid(b * b, win) - mu_bb
    cov = _filter_valid(a * b, win) - mu_ab
    lum = (2 * mu_ab + c1) / (mu_aa + mu_bb + c1)
    cs = (2 * cov + c2) / (var_a + var_b + c2)
    return lum, cs


def _planes(a: np.ndarray) -> np.ndarray:
    if a.ndim == 2:
        return a[None]
    if a.ndim == 3:
        return a
    raise ShapeError(f"expected (H,W) or (C,H,W) image, got {a.shape}")


def ssim(a, b) -> float:
    """Mean SSIM (Gaussian 11x11 window, sigma 1.5), averaged over channels."""
    a, b = _pair(a, b)
    a, b = _planes(a), _planes(b)
    if min(a.shape[-2:]) < SSIM_WINDOW:
        raise ShapeError(f"image {a.shape[-2:]} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    vals = []
    for pa, pb in zip(a, b):
        lum, cs = _ssim_maps(pa, pb)
        vals.append(np.mean(lum * cs))
    return float(np.mean(vals))


def _halve(img: np.ndarray) -> np.ndarray:
    h, w = img.shape[0] // 2 * 2, img.shape[1] // 2 * 2
    x = img[:h, :w]
    return 0.25 * (x[0::2, 0::2] + x[1::2, 0::2] + x[0::2, 1::2] + x[1::2, 1::2])


def msssim_levels(shape, levels: int = len(MSSSIM_WEIGHTS)) -> int:
    """Largest usable level count (<= ``levels``) for an image of ``shape``."""
    m = min(shape[-2:])
    n = 0
    while n < levels and m >= SSIM_WINDOW:
        n += 1
        m //= 2
    return n


def msssim(a, b, levels: int = len(MSSSIM_WEIGHTS), return_levels: bool = False):
    """Multi-scale SSIM with 2x2 mean downsampling between levels.

    Images too small for ``levels`` scales fall back to the largest feasible
    count with the leading weights renormalized; pass ``return_levels=True``
    to learn how many were used.
    """
    if not 1 <= levels <= len(MSSSIM_WEIGHTS):
        raise ValueError(f"levels must be in 1..{len(MSSSIM_WEIGHTS)}, got {levels}")
    a, b = _pair(a, b)
    a, b = _planes(a), _planes(b)
    used = msssim_levels(a.shape, levels)
    if used == 0:
        raise ShapeError(f"image {a.shape[-2:]} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    weights = np.array(MSSSIM_WEIGHTS[:used])
    weights = weights / weights.sum()
    vals = []
    for pa, pb in zip(a, b):
        score = 1.0
        for lvl in range(used):
            lum, cs = _ssim_maps(pa, pb)
            if lvl == used - 1:
                comp = np.mean(lum * cs)
            else:
                comp = np.mean(cs)
                pa, pb = _halve(pa), _halve(pb)
            score *= max(comp, 0.0) ** weights[lvl]
        vals.append(score)
    value = float(np.mean(vals))
    return (value, used) if return_levels else value


def shave_border(img, pixels: int) -> np.ndarray:
    """Drop ``pixels`` rows and columns from every side."""
    img = np.asarray(img)
    if pixels < 0:
        raise ShapeError("shave width must be non-negative")
    h, w = img.shape[-2:]
    if 2 * pixels >= h or 2 * pixels >= w:
        raise ShapeError(f"cannot shave {pixels} pixels from a {h}x{w} image")
    if pixels == 0:
        return img
    return img[..., pixels:-pixels, pixels:-pixels]


METRICS = {"psnr": psnr, "ssim": ssim, "msssim": msssim}
