"""Bicubic resizing, Gaussian blur and the HR -> LR -> HR degradation pipeline."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Union

import numpy as np

from .errors import ConfigError, ShapeError

CUBIC_A = -0.5


@dataclass(frozen=True)
class ResizeSpec:
    """Resize by ``scale`` (output/input). ``antialias`` only matters when downscaling."""

    scale: Union[Fraction, float, int]
    antialias: bool = True
    a: float = CUBIC_A

    def __post_init__(self):
        if not self.scale > 0:
            raise ConfigError(f"scale must be positive, got {self.scale}")


@dataclass(frozen=True)
class BicubicDownUp:
    """Antialiased bicubic downscale followed by bicubic upscale."""


@dataclass(frozen=True)
class GaussianDecimateUp:
    """Gaussian blur, keep every ``scale``-th pixel from index 0, bicubic upscale."""

    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ConfigError(f"sigma must be positive, got {self.sigma}")


DegradeMode = Union[BicubicDownUp, GaussianDecimateUp]


def parse_mode(text: str) -> DegradeMode:
    """Parse ``"bicubic"`` or ``"gaussian:<sigma>"``."""
    text = text.strip().lower()
    if text == "bicubic":
        return BicubicDownUp()
    if text.startswith("gaussian"):
        _, _, sigma = text.partition(":")
        try:
            return GaussianDecimateUp(float(sigma) if sigma else 0.55)
        except ValueError as exc:
            raise ConfigError(f"bad gaussian sigma in {text!r}") from exc
    raise ConfigError(f"unknown degradation mode {text!r}")


def format_mode(mode: DegradeMode) -> str:
    if isinstance(mode, GaussianDecimateUp):
        return f"gaussian:{mode.sigma!r}"
    return "bicubic"


def cubic_kernel(x, a: float = CUBIC_A):
    """Keys cubic convolution kernel; accepts scalars or arrays."""
    ax = np.abs(np.asarray(x, dtype=np.float64))
    ax2 = ax * ax
    ax3 = ax2 * ax
    near = (a + 2) * ax3 - (a + 3) * ax2 + 1
    far = a * ax3 - 5 * a * ax2 + 8 * a * ax - 4 * a
    out = np.where(ax <= 1, near, np.where(ax < 2, far, 0.0))
    return float(out) if out.ndim == 0 else out


def _output_size(n: int, scale) -> int:
    return int(math.floor(n * scale + Fraction(1, 2) if isinstance(scale, Fraction) else n * scale + 0.5))


def resize_weights(n_in: int, n_out: int, scale, antialias: bool = True, a: float = CUBIC_A) -> np.ndarray:
    """Dense ``(n_out, n_in)`` interpolation matrix along one axis.

    Output pixel ``i`` samples source coordinate ``(i + 0.5) / scale - 0.5``.
    Taps falling outside ``[0, n_in)`` are folded onto the nearest edge pixel,
    and each row is normalized to sum to one.
    """
    scale = float(scale)
    shrink = antialias and scale < 1
    kscale = scale if shrink else 1.0
    support = 4.0 / kscale
    i = np.arange(n_out, dtype=np.float64)
    u = (i + 0.5) / scale - 0.5
    left = np.floor(u - support / 2)
    taps = int(math.ceil(support)) + 2
    idx = left[:, None] + np.arange(taps)[None, :]
    w = cubic_kernel((u[:, None] - idx) * kscale, a)
    w = w / w.sum(axis=1, keepdims=True)
    idx = np.clip(idx, 0, n_in - 1).astype(np.intp)
    mat = np.zeros((n_out, n_in), dtype=np.float64)
    rows = np.repeat(np.arange(n_out), taps)
    np.add.at(mat, (rows, idx.ravel()), w.ravel())
    return mat


def _check_image(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 3:
        raise ShapeError(f"expected (C,H,W) image, got shape {img.shape}")
    if img.size == 0:
        raise ShapeError("empty image")
    return img


def resize_bicubic(img: np.ndarray, spec: ResizeSpec) -> np.ndarray:
    """Resize a ``(C,H,W)`` image; output dims are ``round(dim * scale)``."""
    img = _check_image(img)
    _, h, w = img.shape
    oh, ow = _output_size(h, spec.scale), _output_size(w, spec.scale)
    if oh == 0 or ow == 0:
        raise ShapeError(f"resizing {h}x{w} by {spec.scale} gives an empty image")
    wh = resize_weights(h, oh, spec.scale, spec.antialias, spec.a)
    ww = resize_weights(w, ow, spec.scale, spec.antialias, spec.a)
    out = np.einsum("yh,chw,xw->cyx", wh, img.astype(np.float64), ww, optimize=True)
    return out.astype(np.result_type(img.dtype, np.float32), copy=False)


def gaussian_kernel1d(sigma: float) -> np.ndarray:
    radius = int(math.ceil(3 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2 * sigma * sigma))
    return k / k.sum()


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur, radius ``ceil(3 sigma)``, replicated edges."""
    if not sigma > 0:
        raise ConfigError(f"sigma must be positive, got {sigma}")
    img = _check_image(img)
    k = gaussian_kernel1d(sigma)
    r = len(k) // 2
    x = np.pad(img.astype(np.float64), ((0, 0), (r, r), (r, r)), mode="edge")
    _, h, w = img.shape
    tmp = sum(k[j] * x[:, j : j + h, :] for j in range(len(k)))
    out = sum(k[j] * tmp[:, :, j : j + w] for j in range(len(k)))
    return out.astype(np.result_type(img.dtype, np.float32), copy=False)


def modcrop(img: np.ndarray, scale: int) -> np.ndarray:
    """Crop bottom/right so both spatial dims are multiples of ``scale``."""
    if scale < 1:
        raise ConfigError(f"scale must be >= 1, got {scale}")
    img = np.asarray(img)
    h, w = img.shape[-2:]
    h2, w2 = h - h % scale, w - w % scale
    if h2 == 0 or w2 == 0:
        raise ShapeError(f"{h}x{w} image is smaller than scale {scale}")
    return img[..., :h2, :w2]


def degrade(hr: np.ndarray, scale: int, mode: DegradeMode = BicubicDownUp()) -> np.ndarray:
    """Synthesize the bicubic-upscaled low-resolution counterpart of ``hr``.

    The result has the same dimensions as ``hr``.
    """
    hr = _check_image(hr)
    h, w = hr.shape[1:]
    if h % scale or w % scale:
        raise ShapeError(f"{h}x{w} is not divisible by scale {scale}; modcrop first")
    if isinstance(mode, GaussianDecimateUp):
        lr = gaussian_blur(hr, mode.sigma)[:, ::scale, ::scale]
    elif isinstance(mode, BicubicDownUp):
        lr = resize_bicubic(hr, ResizeSpec(Fraction(1, scale), antialias=True))
    else:
        raise ConfigError(f"unknown degradation mode {mode!r}")
    return resize_bicubic(lr, ResizeSpec(scale, antialias=False))
