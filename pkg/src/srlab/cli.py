"""Command-line entry point: ``srlab <command> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import curve, evaluate, resample, train
from .errors import ConfigError, SRLabError
from .image_io import list_images, load_image, rgb_to_ycbcr, save_image, to_float, to_u8, ycbcr_to_rgb
from .model import NetworkConfig, export_filters, init_network, load_checkpoint, predict_full, save_checkpoint

log = logging.getLogger("srlab")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_IO = 0, 1, 2, 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


# --------------------------------------------------------------------------
# run configuration files


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v.strip())


@dataclass(frozen=True)
class RunConfig:
    """Flat ``key = value`` settings for the network, training and evaluation."""

    network: str = "9-1-5"
    filters: Optional[tuple[int, ...]] = None
    channels: int = 1
    space: str = "y"
    scale: int = 3
    f_sub: int = 33
    stride: int = 14
    batch_size: int = 128
    momentum: float = 0.9
    lr: Optional[tuple[float, ...]] = None
    total_backprops: int = 10**7
    seed: int = 0
    channel_weights: Optional[tuple[float, ...]] = None
    mode: str = "bicubic"
    degrade_scope: str = "subimage"
    val_every: int = 500_000
    checkpoint_every: int = 500_000
    val_dir: Optional[str] = None
    shave: Optional[int] = None
    metrics: tuple[str, ...] = ("psnr",)
    channel: str = "y"

    _PARSERS = {
        "filters": _ints,
        "lr": _floats,
        "channel_weights": _floats,
        "metrics": lambda s: tuple(m.strip().lower() for m in s.split(",") if m.strip()),
    }

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        known = {f.name: f for f in fields(cls)}
        values = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, raw = line.partition("=")
            key, raw = key.strip(), raw.strip()
            if not sep:
                raise ConfigError(f"line {lineno}: expected key = value")
            if key not in known:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            try:
                if key in cls._PARSERS:
                    values[key] = cls._PARSERS[key](raw)
                elif known[key].type in ("int", "Optional[int]"):
                    values[key] = int(raw)
                elif known[key].type == "float":
                    values[key] = float(raw)
                else:
                    values[key] = raw
            except ValueError:
                raise ConfigError(f"line {lineno}: bad value {raw!r} for {key}") from None
        cfg = cls(**values)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_text(Path(path).read_text())

    def network_config(self) -> NetworkConfig:
        return NetworkConfig.parse(self.network, self.filters, self.channels)

    def train_config(self) -> train.TrainConfig:
        net_cfg = self.network_config()
        default_lr = train.default_learning_rates(len(net_cfg.layers), self.f_sub - net_cfg.shrink)
        return train.TrainConfig(
            scale=self.scale,
            f_sub=self.f_sub,
            stride=self.stride,
            batch_size=self.batch_size,
            momentum=self.momentum,
            lr_per_layer=self.lr or default_lr,
            total_backprops=self.total_backprops,
            seed=self.seed,
            channel_weights=self.channel_weights or (1.0,) * self.channels,
            mode=resample.parse_mode(self.mode),
            degrade_scope=self.degrade_scope,
            val_every=self.val_every,
            checkpoint_every=self.checkpoint_every,
        )

    def eval_protocol(self) -> evaluate.EvalProtocol:
        return evaluate.EvalProtocol(
            scale=self.scale,
            shave=self.shave,
            metrics=self.metrics,
            channel=self.channel,
            mode=resample.parse_mode(self.mode),
        )

    def validate(self) -> None:
        if self.space not in evaluate.SPACES:
            raise ConfigError(f"space must be one of {evaluate.SPACES}")
        if (self.space == "y") != (self.channels == 1):
            raise ConfigError(f"space {self.space!r} does not match channels={self.channels}")
        self.train_config().check_network(self.network_config())
        self.eval_protocol()


# --------------------------------------------------------------------------
# commands


def _load_space(path, space: str) -> np.ndarray:
    img = to_float(load_image(path))
    return train.to_space(img, space)


def cmd_prepare(args) -> int:
    hr_dir = Path(args.hr_dir)
    try:
        paths = list_images(hr_dir)
    except FileNotFoundError as exc:
        raise DataError(str(exc)) from None
    if not paths:
        raise DataError(f"{hr_dir} contains no images")
    net_cfg = NetworkConfig.parse(args.network, channels=1 if args.space == "y" else 3)
    cfg = train.TrainConfig(
        scale=args.scale,
        f_sub=args.fsub,
        stride=args.stride,
        mode=resample.parse_mode(args.mode),
        degrade_scope=args.degrade_scope,
        lr_per_layer=train.default_learning_rates(len(net_cfg.layers)),
        channel_weights=(1.0,) * net_cfg.channels,
    )
    images, manifest = [], []
    for p in paths:
        img = resample.modcrop(_load_space(p, args.space), args.scale)
        images.append(img)
        manifest.append({"file": p.name, "height": img.shape[1], "width": img.shape[2]})
    samples = train.extract_subimages(images, cfg, net_cfg)
    if len(samples) == 0:
        raise DataError("no image is large enough for a single sub-image")
    out = Path(args.out)
    train.save_samples(out, samples)
    meta = {
        "count": len(samples),
        "channels": samples.channels,
        "f_sub": samples.f_sub,
        "out_size": samples.out_size,
        "scale": args.scale,
        "stride": args.stride,
        "mode": resample.format_mode(cfg.mode),
        "space": args.space,
        "network": net_cfg.notation,
        "images": manifest,
    }
    Path(str(out) + ".manifest.json").write_text(json.dumps(meta, indent=2) + "\n")
    print(f"wrote {len(samples)} samples to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    net_cfg = cfg.network_config()
    tcfg = cfg.train_config()
    samples = train.load_samples(args.data)
    val = None
    if cfg.val_dir:
        val_paths = list_images(cfg.val_dir)
        val = train.make_validation_set([_load_space(p, cfg.space) for p in val_paths], tcfg)
    if args.resume:
        ck = load_checkpoint(args.resume)
        if ck.network.config != net_cfg:
            raise ConfigError("checkpoint architecture differs from the run configuration")
        net, counter = ck.network, ck.backprops
        state = train.MomentumState(ck.momentum) if ck.momentum is not None else None
    else:
        net, counter, state = init_network(net_cfg, tcfg.seed), 0, None
    result = train.train_loop(
        net, samples, tcfg, val, args.log, args.out, state=state, start_backprops=counter
    )
    save_checkpoint(args.out, result.checkpoint.network, result.checkpoint.momentum, result.checkpoint.backprops)
    print(f"trained to {result.checkpoint.backprops} backprops; checkpoint {args.out}")
    return EXIT_OK


def super_resolve_image(net, img: np.ndarray, scale: int = 1, space: Optional[str] = None) -> np.ndarray:
    """Upscale a [0,1] RGB or gray tensor by ``scale`` and apply the network.

    Y-only models (c=1) see the luminance; chroma stays bicubic.
    """
    c = net.config.channels
    space = space or ("y" if c == 1 else "ycbcr")
    if scale > 1:
        img = resample.resize_bicubic(img, resample.ResizeSpec(scale, antialias=False))
    if img.shape[0] == 1:
        if c != 1:
            raise ConfigError("a 3-channel model cannot process a grayscale image")
        return predict_full(net, img).astype(np.float64)
    if space == "rgb":
        return predict_full(net, img).astype(np.float64)
    ycc = evaluate.super_resolve(rgb_to_ycbcr(img), net, space)
    return ycbcr_to_rgb(ycc)


def cmd_sr(args) -> int:
    ck = load_checkpoint(args.model)
    img = to_float(load_image(args.input))
    out = super_resolve_image(ck.network, img, args.scale, args.space)
    save_image(args.output, to_u8(out))
    print(f"wrote {args.output} ({out.shape[2]}x{out.shape[1]})")
    return EXIT_OK


def cmd_eval(args) -> int:
    protocol = evaluate.EvalProtocol(
        scale=args.scale,
        shave=args.shave,
        metrics=tuple(m.strip().lower() for m in args.metrics.split(",")),
        channel=args.channel,
        mode=resample.parse_mode(args.mode),
        quantize_output=args.quantize_output,
    )
    if args.method == "bicubic":
        method = "bicubic"
    else:
        if not args.model:
            raise UsageError("--method srcnn needs --model")
        method = load_checkpoint(args.model).network
    if not list_images(args.test_dir):
        raise DataError(f"{args.test_dir} contains no images")
    report = evaluate.evaluate_dataset(method, args.test_dir, protocol, space=args.space)
    if args.csv:
        Path(args.csv).write_text(report.to_csv())
    print(report.format_table())
    return EXIT_OK if report.per_image else EXIT_DATA


def cmd_filters(args) -> int:
    ck = load_checkpoint(args.model)
    grid = export_filters(ck.network, args.layer, args.out)
    print(f"wrote {args.out} ({grid.width}x{grid.height})")
    return EXIT_OK


def _baseline(text: str) -> tuple[str, float]:
    label, sep, value = text.rpartition("=")
    try:
        return (label if sep else "baseline"), float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"baseline must be LABEL=VALUE, got {text!r}") from None


def cmd_curve(args) -> int:
    labels = args.label or None
    if labels and len(labels) != len(args.log):
        raise UsageError("give one --label per --log")
    curve.write_curve(args.log, args.out, args.baseline or (), labels, args.title)
    print(f"wrote {args.out}")
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="srlab", description="Super-resolution CNN laboratory")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("prepare", help="build a training sample archive")
    s.add_argument("--hr-dir", required=True, help="directory of high-resolution images")
    s.add_argument("--scale", type=int, default=3)
    s.add_argument("--fsub", type=int, default=33, help="sub-image size")
    s.add_argument("--stride", type=int, default=14)
    s.add_argument("--mode", default="bicubic", help="bicubic or gaussian:<sigma>")
    s.add_argument("--network", default="9-1-5", help="layer sizes, fixes the target crop")
    s.add_argument("--space", default="y", choices=evaluate.SPACES)
    s.add_argument("--degrade-scope", default="subimage", choices=("subimage", "image"))
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_prepare)

    s = sub.add_parser("train", help="train a network on a sample archive")
    s.add_argument("--data", required=True, help="sample archive from 'prepare'")
    s.add_argument("--config", help="key = value run configuration")
    s.add_argument("--out", required=True, help="checkpoint path")
    s.add_argument("--log", help="CSV convergence log (appended)")
    s.add_argument("--resume", help="checkpoint to continue from")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("sr", help="super-resolve one image")
    s.add_argument("--model", required=True)
    s.add_argument("--input", required=True)
    s.add_argument("--output", required=True)
    s.add_argument("--scale", type=int, default=1, help="bicubic pre-upscaling factor")
    s.add_argument("--space", choices=evaluate.SPACES, help="color space of a 3-channel model")
    s.set_defaults(func=cmd_sr)

    s = sub.add_parser("eval", help="benchmark bicubic or a checkpoint on a test set")
    s.add_argument("--method", choices=("bicubic", "srcnn"), default="bicubic")
    s.add_argument("--model")
    s.add_argument("--test-dir", required=True)
    s.add_argument("--scale", type=int, default=3)
    s.add_argument("--metrics", default="psnr,ssim,msssim")
    s.add_argument("--channel", default="y", choices=evaluate.CHANNELS)
    s.add_argument("--shave", type=int, help="border width (default: scale)")
    s.add_argument("--mode", default="bicubic")
    s.add_argument("--space", default="y", choices=evaluate.SPACES)
    s.add_argument("--quantize-output", action="store_true", help="round SR output to 8-bit levels")
    s.add_argument("--csv", help="write image,metric,value rows here")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("filters", help="export one layer's filters as an image grid")
    s.add_argument("--model", required=True)
    s.add_argument("--layer", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_filters)

    s = sub.add_parser("curve", help="plot validation PSNR against backprops")
    s.add_argument("--log", action="append", required=True, help="training log (repeatable)")
    s.add_argument("--label", action="append", help="legend label per log")
    s.add_argument("--baseline", action="append", type=_baseline, help="LABEL=PSNR reference line")
    s.add_argument("--title", default="")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_curve)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"srlab {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, SRLabError) as exc:
        print(f"srlab {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"srlab {args.command}: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
