"""Benchmark runner: degrade ground-truth images, super-resolve, score."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from . import metrics
from .errors import ConfigError, SRLabError
from .image_io import list_images, load_image, quantize, rgb_to_ycbcr, to_float, ycbcr_to_rgb
from .model import Network, predict_full
from .resample import BicubicDownUp, DegradeMode, degrade, modcrop

log = logging.getLogger(__name__)

CHANNELS = ("y", "cb", "cr", "rgb")
SPACES = ("y", "ycbcr", "rgb")


@dataclass(frozen=True)
class EvalProtocol:
    scale: int
    shave: Optional[int] = None
    metrics: tuple[str, ...] = ("psnr",)
    channel: str = "y"
    mode: DegradeMode = BicubicDownUp()
    quantize_gt: bool = True
    quantize_output: bool = False

    def __post_init__(self):
        if self.scale < 1:
            raise ConfigError(f"scale must be >= 1, got {self.scale}")
        if self.shave is not None and self.shave < 0:
            raise ConfigError("shave must be non-negative")
        if not self.metrics:
            raise ConfigError("at least one metric is required")
        unknown = set(self.metrics) - set(metrics.METRICS)
        if unknown:
            raise ConfigError(f"unknown metrics {sorted(unknown)}")
        if self.channel not in CHANNELS:
            raise ConfigError(f"channel must be one of {CHANNELS}, got {self.channel!r}")

    @property
    def shave_px(self) -> int:
        return self.scale if self.shave is None else self.shave


@dataclass
class EvalReport:
    method: str
    dataset: str
    protocol: EvalProtocol
    per_image: dict[str, dict[str, float]] = field(default_factory=dict)
    failed: dict[str, str] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    @property
    def averages(self) -> dict[str, float]:
        out = {}
        for m in self.protocol.metrics:
            vals = [row[m] for row in self.per_image.values()]
            out[m] = float(np.mean(vals)) if vals else math.nan
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["image", "metric", "value"])
        for name, row in self.per_image.items():
            for m in self.protocol.metrics:
                w.writerow([name, m, _fmt(row[m])])
        for m, v in self.averages.items():
            w.writerow(["average", m, _fmt(v)])
        return buf.getvalue()

    def format_table(self) -> str:
        ms = list(self.protocol.metrics)
        names = list(self.per_image) + ["average"]
        width = max(len(n) for n in names + ["image"])
        lines = [
            f"{self.method} on {self.dataset}, x{self.protocol.scale}, channel {self.protocol.channel}",
            "  ".join(["image".ljust(width)] + [m.rjust(10) for m in ms]),
        ]
        rows = list(self.per_image.items()) + [("average", self.averages)]
        for name, row in rows:
            lines.append("  ".join([name.ljust(width)] + [_fmt(row[m]).rjust(10) for m in ms]))
        for name, err in self.failed.items():
            lines.append(f"{name}: FAILED ({err})")
        lines += self.notes
        return "\n".join(lines)


def _fmt(v: float) -> str:
    if math.isinf(v):
        return "inf"
    return f"{v:.4f}"


def ground_truth_ycbcr(rgb_or_gray: np.ndarray, quantize_gt: bool = True) -> np.ndarray:
    """YCbCr (or Y for gray input) of a [0,1] tensor, optionally on 8-bit levels."""
    if rgb_or_gray.shape[0] == 1:
        return rgb_or_gray
    ycc = rgb_to_ycbcr(rgb_or_gray)
    return quantize(ycc) if quantize_gt else ycc


def super_resolve(
    lr_up: np.ndarray, method: Union[str, Network], space: str = "y"
) -> np.ndarray:
    """Super-resolve a bicubic-upscaled YCbCr (or Y) tensor.

    ``space`` says what the network consumes: ``"y"`` runs it on the
    luminance only and keeps the bicubic chroma; ``"ycbcr"`` and ``"rgb"``
    feed all three channels in that color space.
    """
    if isinstance(method, str):
        if method != "bicubic":
            raise ConfigError(f"unknown method {method!r}")
        return lr_up
    if space not in SPACES:
        raise ConfigError(f"space must be one of {SPACES}, got {space!r}")
    c = method.config.channels
    if space == "y":
        if c != 1:
            raise ConfigError(f"a Y-channel model needs c=1, checkpoint has c={c}")
        out = lr_up.copy()
        out[:1] = predict_full(method, lr_up[:1]).astype(np.float64)
        return out
    if c != 3 or lr_up.shape[0] != 3:
        raise ConfigError(f"{space} models need 3-channel input and c=3, got c={c}")
    if space == "ycbcr":
        return predict_full(method, lr_up).astype(np.float64)
    return rgb_to_ycbcr(predict_full(method, ycbcr_to_rgb(lr_up)).astype(np.float64))


def select_channel(ycc: np.ndarray, channel: str) -> np.ndarray:
    if ycc.shape[0] == 1:
        if channel != "y":
            raise ConfigError(f"grayscale image has no {channel} channel")
        return ycc
    if channel == "rgb":
        return ycbcr_to_rgb(ycc)
    return ycc[["y", "cb", "cr"].index(channel)][None]


def evaluate_image(
    hr: np.ndarray, method: Union[str, Network], protocol: EvalProtocol, space: str = "y"
) -> tuple[dict[str, float], list[str]]:
    """Metrics for one [0,1] RGB or gray ground-truth tensor."""
    gt = ground_truth_ycbcr(modcrop(hr, protocol.scale), protocol.quantize_gt)
    lr_up = degrade(gt, protocol.scale, protocol.mode).astype(np.float64)
    sr = super_resolve(lr_up, method, space)
    ref = select_channel(gt, protocol.channel)
    out = select_channel(sr, protocol.channel)
    if protocol.quantize_output:
        out = quantize(out)
    ref = metrics.shave_border(ref, protocol.shave_px)
    out = metrics.shave_border(out, protocol.shave_px)
    row = {}
    notes = []
    for m in protocol.metrics:
        if m == "msssim":
            row[m], used = metrics.msssim(out, ref, return_levels=True)
            if used < len(metrics.MSSSIM_WEIGHTS):
                notes.append(f"msssim used {used} levels")
        else:
            row[m] = metrics.METRICS[m](out, ref)
    return row, notes


def evaluate_dataset(
    method: Union[str, Network],
    hr_dir,
    protocol: EvalProtocol,
    space: str = "y",
    label: Optional[str] = None,
) -> EvalReport:
    """Score every image of ``hr_dir`` (sorted by name); unreadable files are recorded, not fatal."""
    hr_dir = Path(hr_dir)
    if label is None:
        label = method if isinstance(method, str) else f"srcnn {method.config.notation}"
    report = EvalReport(label, hr_dir.name, protocol)
    for path in list_images(hr_dir):
        try:
            hr = to_float(load_image(path))
            row, notes = evaluate_image(hr, method, protocol, space)
        except (SRLabError, OSError) as exc:
            log.warning("skipping %s: %s", path.name, exc)
            report.failed[path.name] = str(exc)
            continue
        report.per_image[path.stem] = row
        report.notes += [f"{path.stem}: {n}" for n in notes]
    return report
