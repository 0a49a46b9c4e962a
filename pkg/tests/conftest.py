import sys

import numpy as np
import pytest

from srlab.image_io import ImageU8, save_image


def naive_conv(x, w, b):
    """Nested-loop valid cross-correlation used as an independent oracle."""
    c, h, wd = x.shape
    o, _, f, _ = w.shape
    out = np.zeros((o, h - f + 1, wd - f + 1))
    for k in range(o):
        for y in range(h - f + 1):
            for xx in range(wd - f + 1):
                acc = b[k]
                for i in range(c):
                    for r in range(f):
                        for s in range(f):
                            acc += w[k, i, r, s] * x[i, y + r, xx + s]
                out[k, y, xx] = acc
    return out


def smooth_image(rng, h, w, channels=1, blur=4):
    """Random band-limited image in [0, 1] (sum of a few low-frequency cosines)."""
    yy, xx = np.mgrid[0:h, 0:w]
    img = np.zeros((channels, h, w))
    for c in range(channels):
        for _ in range(6):
            fy, fx = rng.uniform(0, 1.0 / blur, size=2)
            ph = rng.uniform(0, 2 * np.pi)
            img[c] += np.cos(2 * np.pi * (fy * yy + fx * xx) + ph)
    img -= img.min()
    return img / img.max()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def image_dir(tmp_path):
    """Directory with a few small textured RGB test images."""
    rng = np.random.default_rng(7)
    d = tmp_path / "images"
    d.mkdir()
    for k, (h, w) in enumerate([(60, 72), (66, 66), (75, 57)]):
        img = smooth_image(rng, h, w, channels=3, blur=6)
        img = 0.8 * img + 0.2 * rng.random(img.shape)
        data = np.floor(img.transpose(1, 2, 0) * 255 + 0.5).astype(np.uint8)
        save_image(d / f"img{k}.png", ImageU8(data))
    return d


def pytest_terminal_summary(terminalreporter):
    """Print one PASS/FAIL line per acceptance criterion that ran."""
    module = sys.modules.get("test_acceptance")
    if module is None or not module.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(module.RESULTS):
        terminalreporter.write_line(module.report_line(n, *module.RESULTS[n]))
