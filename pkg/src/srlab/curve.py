"""Render PSNR-vs-backprops convergence curves from training logs as SVG."""

from __future__ import annotations

import csv
import math
from html import escape
from pathlib import Path

from .errors import FormatError

WIDTH, HEIGHT = 720, 440
MARGIN = dict(left=70, right=150, top=30, bottom=55)
MARGIN_FRAC = 0.05
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")


def read_log(path) -> list[tuple[int, float]]:
    """(backprops, val_psnr) rows that carry a validation value; backprops > 0 only."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"backprops", "val_psnr"} <= set(reader.fieldnames):
            raise FormatError(f"{path}: not a training log (missing header)")
        points = []
        for row in reader:
            val = (row.get("val_psnr") or "").strip()
            bp = int(row["backprops"])
            if val and bp > 0:
                v = float(val)
                if math.isfinite(v):
                    points.append((bp, v))
    return points


def axis_ranges(series, baselines=()) -> tuple[float, float, float, float]:
    """``(log10 x_min, log10 x_max, y_min, y_max)`` padded by 5% of each span."""
    xs = [math.log10(x) for _, pts in series for x, _ in pts]
    ys = [y for _, pts in series for _, y in pts] + [v for _, v in baselines]
    if not xs:
        raise FormatError("no data points to plot")
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    xs_pad = (x1 - x0) * MARGIN_FRAC or 0.5
    ys_pad = (y1 - y0) * MARGIN_FRAC or 0.5
    return x0 - xs_pad, x1 + xs_pad, y0 - ys_pad, y1 + ys_pad


def render_svg(series, baselines=(), title: str = "") -> str:
    """``series`` is a list of ``(label, [(backprops, psnr), ...])``."""
    series = [(label, pts) for label, pts in series if pts]
    x0, x1, y0, y1 = axis_ranges(series, baselines)
    left, top = MARGIN["left"], MARGIN["top"]
    pw = WIDTH - left - MARGIN["right"]
    ph = HEIGHT - top - MARGIN["bottom"]

    def px(bp):
        return left + (math.log10(bp) - x0) / (x1 - x0) * pw

    def py(v):
        return top + (y1 - v) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#000"/>',
    ]
    if title:
        out.append(f'<text x="{left + pw / 2:.1f}" y="18" text-anchor="middle">{escape(title)}</text>')
    for k in range(math.ceil(x0), math.floor(x1) + 1):
        x = left + (k - x0) / (x1 - x0) * pw
        out.append(f'<line class="tick" x1="{x:.2f}" y1="{top + ph}" x2="{x:.2f}" y2="{top + ph + 5}" stroke="#000"/>')
        out.append(f'<text x="{x:.2f}" y="{top + ph + 18}" text-anchor="middle">1e{k}</text>')
    for v in _nice_ticks(y0, y1):
        y = py(v)
        out.append(f'<line class="tick" x1="{left - 5}" y1="{y:.2f}" x2="{left}" y2="{y:.2f}" stroke="#000"/>')
        out.append(f'<text x="{left - 8}" y="{y + 4:.2f}" text-anchor="end">{v:g}</text>')
    out.append(
        f'<text x="{left + pw / 2:.1f}" y="{HEIGHT - 12}" text-anchor="middle">Number of backprops</text>'
    )
    out.append(
        f'<text transform="translate(16 {top + ph / 2:.1f}) rotate(-90)" text-anchor="middle">'
        "Average test PSNR (dB)</text>"
    )
    legend_y = top + 10
    for i, (label, value) in enumerate(baselines):
        y = py(value)
        out.append(
            f'<line class="baseline" x1="{left}" y1="{y:.2f}" x2="{left + pw}" y2="{y:.2f}" '
            'stroke="#555" stroke-dasharray="6 4"/>'
        )
        out.append(f'<text x="{left + pw + 8}" y="{y + 4:.2f}">{escape(label)} ({value:g})</text>')
    for i, (label, pts) in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        coords = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in pts)
        out.append(f'<polyline class="series" fill="none" stroke="{color}" stroke-width="1.5" points="{coords}"/>')
        ly = legend_y + 16 * i
        out.append(f'<line x1="{left + 10}" y1="{ly}" x2="{left + 30}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{left + 35}" y="{ly + 4}">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _nice_ticks(lo: float, hi: float, target: int = 6) -> list[float]:
    span = hi - lo
    raw = span / target
    mag = 10 ** math.floor(math.log10(raw))
    step = next(m * mag for m in (1, 2, 5, 10) if m * mag >= raw)
    start = math.ceil(lo / step) * step
    ticks = []
    v = start
    while v <= hi + 1e-12:
        ticks.append(round(v, 10))
        v += step
    return ticks


def write_curve(log_paths, out_path, baselines=(), labels=None, title: str = "") -> str:
    """Read every log and write one SVG; nothing is written if any log is empty."""
    labels = labels or [Path(p).stem for p in log_paths]
    series = []
    for label, path in zip(labels, log_paths):
        pts = read_log(path)
        if not pts:
            raise FormatError(f"{path}: log has no validation rows")
        series.append((label, pts))
    svg = render_svg(series, baselines, title)
    Path(out_path).write_text(svg)
    return svg
