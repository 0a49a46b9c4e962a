import csv
import io
import math

import numpy as np
import pytest

from srlab import metrics
from srlab.errors import ConfigError
from srlab.evaluate import EvalProtocol, evaluate_dataset, evaluate_image, ground_truth_ycbcr, super_resolve
from srlab.image_io import load_image, quantize, rgb_to_ycbcr, to_float
from srlab.model import Network, NetworkConfig, init_network
from srlab.resample import GaussianDecimateUp, degrade, modcrop
from srlab.tensor import FilterBank


def identity_net(c=1):
    w = np.zeros((c, c, 1, 1))
    for i in range(c):
        w[i, i] = 1.0
    return Network(NetworkConfig(c, ((1, c),)), [FilterBank(w, np.zeros(c))])


def zero_net():
    cfg = NetworkConfig.parse("9-1-5")
    return Network(cfg, [FilterBank.zeros(n, i, f) for n, i, f in cfg.bank_shapes()])


def test_protocol_defaults_and_validation():
    p = EvalProtocol(scale=3)
    assert p.shave_px == 3 and p.metrics == ("psnr",) and p.channel == "y"
    assert EvalProtocol(scale=2, shave=0).shave_px == 0
    for kw in ({"shave": -1}, {"metrics": ()}, {"metrics": ("ifc",)}, {"channel": "lab"}):
        with pytest.raises(ConfigError):
            EvalProtocol(scale=3, **kw)


def test_bicubic_image_matches_manual_pipeline(image_dir):
    path = sorted(image_dir.iterdir())[0]
    hr = to_float(load_image(path))
    row, _ = evaluate_image(hr, "bicubic", EvalProtocol(scale=3, metrics=("psnr", "ssim")))
    gt = quantize(rgb_to_ycbcr(modcrop(hr, 3)))[:1]
    lr_up = degrade(gt, 3)
    assert row["psnr"] == pytest.approx(metrics.psnr(lr_up[:, 3:-3, 3:-3], gt[:, 3:-3, 3:-3]), abs=1e-12)
    assert row["ssim"] == pytest.approx(metrics.ssim(lr_up[:, 3:-3, 3:-3], gt[:, 3:-3, 3:-3]), abs=1e-12)


def test_report_averages_and_csv(image_dir):
    proto = EvalProtocol(scale=3, metrics=("psnr", "ssim", "msssim"))
    report = evaluate_dataset("bicubic", image_dir, proto)
    assert list(report.per_image) == ["img0", "img1", "img2"]
    for m in proto.metrics:
        assert report.averages[m] == pytest.approx(np.mean([r[m] for r in report.per_image.values()]), abs=1e-12)
    rows = list(csv.reader(io.StringIO(report.to_csv())))
    assert rows[0] == ["image", "metric", "value"]
    assert len(rows) == 1 + 3 * 3 + 3
    assert rows[-1][0] == "average"
    table = report.format_table()
    assert "average" in table and "img1" in table
    # 60-75 px images are too small for five MS-SSIM levels
    assert any("msssim used" in n for n in report.notes)


def test_identity_network_equals_bicubic(image_dir):
    proto = EvalProtocol(scale=2, metrics=("psnr",))
    a = evaluate_dataset("bicubic", image_dir, proto)
    b = evaluate_dataset(identity_net(), image_dir, proto)
    for name in a.per_image:
        assert a.per_image[name]["psnr"] == pytest.approx(b.per_image[name]["psnr"], abs=1e-9)
    assert b.method == "srcnn 1"


def test_zero_network_worse_than_bicubic(image_dir):
    proto = EvalProtocol(scale=3)
    bic = evaluate_dataset("bicubic", image_dir, proto).averages["psnr"]
    zero = evaluate_dataset(zero_net(), image_dir, proto).averages["psnr"]
    assert zero < bic
    # a zero Y image against the ground truth Y
    hr = to_float(load_image(image_dir / "img0.png"))
    gt = quantize(rgb_to_ycbcr(modcrop(hr, 3)))[:1]
    expect = metrics.psnr(np.zeros_like(gt)[:, 3:-3, 3:-3], gt[:, 3:-3, 3:-3])
    assert evaluate_dataset(zero_net(), image_dir, proto).per_image["img0"]["psnr"] == pytest.approx(expect, abs=1e-9)


def test_chroma_channels_and_rgb(image_dir):
    for ch in ("cb", "cr", "rgb"):
        r = evaluate_dataset("bicubic", image_dir, EvalProtocol(scale=3, channel=ch))
        assert math.isfinite(r.averages["psnr"])
    # chroma is smoother than luminance in these images, so it reconstructs better
    y = evaluate_dataset("bicubic", image_dir, EvalProtocol(scale=3)).averages["psnr"]
    cb = evaluate_dataset("bicubic", image_dir, EvalProtocol(scale=3, channel="cb")).averages["psnr"]
    assert cb > y


def test_failed_images_are_recorded(image_dir):
    (image_dir / "broken.png").write_bytes(b"\x89PNG\r\n\x1a\n broken")
    (image_dir / "tiny.pgm").write_bytes(b"P5 2 2 255\n\0\0\0\0")
    report = evaluate_dataset("bicubic", image_dir, EvalProtocol(scale=3))
    assert set(report.failed) == {"broken.png", "tiny.pgm"}
    assert len(report.per_image) == 3
    assert "FAILED" in report.format_table()


def test_gaussian_mode_protocol(image_dir):
    a = evaluate_dataset("bicubic", image_dir, EvalProtocol(scale=3)).averages["psnr"]
    b = evaluate_dataset("bicubic", image_dir, EvalProtocol(scale=3, mode=GaussianDecimateUp(0.55))).averages["psnr"]
    assert a != b


def test_quantize_output_toggle_small_effect(image_dir):
    a = evaluate_dataset("bicubic", image_dir, EvalProtocol(scale=3)).averages["psnr"]
    b = evaluate_dataset("bicubic", image_dir, EvalProtocol(scale=3, quantize_output=True)).averages["psnr"]
    assert a != b and abs(a - b) < 0.1


def test_super_resolve_spaces(rng):
    ycc = rng.random((3, 12, 12))
    out = super_resolve(ycc, identity_net(1), "y")
    np.testing.assert_allclose(out, ycc, atol=1e-6)
    np.testing.assert_allclose(super_resolve(ycc, identity_net(3), "ycbcr"), ycc, atol=1e-6)
    np.testing.assert_allclose(super_resolve(ycc, identity_net(3), "rgb"), ycc, atol=1e-6)
    with pytest.raises(ConfigError):
        super_resolve(ycc, identity_net(3), "y")
    with pytest.raises(ConfigError):
        super_resolve(ycc, "lanczos")
    with pytest.raises(ConfigError):
        super_resolve(ycc, identity_net(1), "hsv")


def test_ground_truth_quantization(rng):
    rgb = rng.random((3, 6, 6))
    q = ground_truth_ycbcr(rgb)
    np.testing.assert_array_equal(q, quantize(rgb_to_ycbcr(rgb)))
    np.testing.assert_array_equal(ground_truth_ycbcr(rgb, quantize_gt=False), rgb_to_ycbcr(rgb))
    gray = rng.random((1, 6, 6))
    assert ground_truth_ycbcr(gray) is gray


def test_gray_dataset_and_missing_dir(tmp_path, rng):
    from srlab.image_io import ImageU8, save_image

    save_image(tmp_path / "g.pgm", ImageU8(rng.integers(0, 256, (30, 30, 1), dtype=np.uint8)))
    r = evaluate_dataset(init_network(NetworkConfig.parse("9-1-5")), tmp_path, EvalProtocol(scale=3))
    assert len(r.per_image) == 1
    r = evaluate_dataset("bicubic", tmp_path, EvalProtocol(scale=3, channel="cb"))
    assert "g.pgm" in r.failed
    with pytest.raises(FileNotFoundError):
        evaluate_dataset("bicubic", tmp_path / "none", EvalProtocol(scale=3))
