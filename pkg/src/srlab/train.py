"""Sub-image datasets, masked MSE loss, momentum SGD and the training loop."""

from __future__ import annotations

import csv
import logging
import math
import struct
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import metrics
from .errors import ConfigError, FormatError, ShapeError, TruncatedFileError, VersionError
from .image_io import atomic_write_bytes, quantize, rgb_to_ycbcr
from .model import (
    Checkpoint,
    Network,
    NetworkConfig,
    backward,
    forward_with_cache,
    init_network,
    predict_full,
    receptive_field,
    save_checkpoint,
)
from .resample import BicubicDownUp, DegradeMode, degrade, modcrop

log = logging.getLogger(__name__)

REFERENCE_LR = (1e-4, 1e-4, 1e-5)
# The reference rates belong to a loss of 1/2 * squared error summed over the
# output pixels. loss_mse averages over pixels instead, which shrinks every
# gradient by out^2 / 2 (220.5 for the default 21x21 target), so the defaults
# are scaled back up to give the same update sizes.
DEFAULT_OUT = 21
DEFAULT_LR = tuple(lr * DEFAULT_OUT**2 / 2 for lr in REFERENCE_LR)
LOG_HEADER = ("backprops", "epoch", "train_loss", "val_psnr", "elapsed_seconds")


def default_learning_rates(n_layers: int, out_size: int = DEFAULT_OUT) -> tuple:
    """Reference rates rescaled for a per-pixel loss on ``out_size`` targets.

    Every layer but the last gets the hidden-layer rate, so extra mapping
    layers inherit the second layer's value.
    """
    k = out_size * out_size / 2
    return (REFERENCE_LR[0] * k,) * (n_layers - 1) + (REFERENCE_LR[2] * k,)


@dataclass(frozen=True)
class TrainConfig:
    scale: int = 3
    f_sub: int = 33
    stride: int = 14
    batch_size: int = 128
    momentum: float = 0.9
    lr_per_layer: tuple[float, ...] = DEFAULT_LR
    total_backprops: int = 10**7
    seed: int = 0
    channel_weights: tuple[float, ...] = (1.0,)
    mode: DegradeMode = BicubicDownUp()
    degrade_scope: str = "subimage"
    val_every: int = 500_000
    checkpoint_every: int = 500_000

    def __post_init__(self):
        if self.scale < 1:
            raise ConfigError(f"scale must be >= 1, got {self.scale}")
        if self.f_sub < 1 or self.stride < 1:
            raise ConfigError("f_sub and stride must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if any(lr < 0 for lr in self.lr_per_layer):
            raise ConfigError("learning rates must be non-negative")
        w = self.channel_weights
        if any(x < 0 for x in w) or not any(x > 0 for x in w):
            raise ConfigError("channel weights must be >= 0 and not all zero")
        if self.degrade_scope not in ("subimage", "image"):
            raise ConfigError(f"degrade_scope must be 'subimage' or 'image', got {self.degrade_scope!r}")
        if self.total_backprops < 0 or self.val_every < 1 or self.checkpoint_every < 1:
            raise ConfigError("backprop counts must be positive")

    def check_network(self, config: NetworkConfig) -> None:
        if len(self.lr_per_layer) != len(config.layers):
            raise ConfigError(
                f"{len(self.lr_per_layer)} learning rates for a {len(config.layers)}-layer network"
            )
        if len(self.channel_weights) != config.channels:
            raise ConfigError(
                f"{len(self.channel_weights)} channel weights for a {config.channels}-channel network"
            )
        if self.f_sub < receptive_field(config):
            raise ConfigError(f"f_sub {self.f_sub} is smaller than the receptive field {receptive_field(config)}")


# --------------------------------------------------------------------------
# datasets


@dataclass
class TrainSample:
    input: np.ndarray
    target: np.ndarray


@dataclass
class SampleSet:
    """Stacked training pairs: inputs ``(N,c,f_sub,f_sub)``, targets ``(N,c,out,out)``."""

    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        if len(self.inputs) != len(self.targets):
            raise ShapeError("inputs and targets differ in length")

    def __len__(self) -> int:
        return len(self.inputs)

    def __getitem__(self, i) -> TrainSample:
        return TrainSample(self.inputs[i], self.targets[i])

    @property
    def channels(self) -> int:
        return self.inputs.shape[1]

    @property
    def f_sub(self) -> int:
        return self.inputs.shape[2]

    @property
    def out_size(self) -> int:
        return self.targets.shape[2]


def crop_positions(dim: int, f_sub: int, stride: int) -> range:
    return range(0, dim - f_sub + 1, stride)


def extract_subimages(
    hr_images: Sequence[np.ndarray], config: TrainConfig, network_config: NetworkConfig
) -> SampleSet:
    """Grid-crop every HR image into degraded-input / central-target pairs.

    Images must already be modcropped and in the network's color space.
    """
    config.check_network(network_config)
    f_sub = config.f_sub
    out = f_sub - network_config.shrink
    off = network_config.shrink // 2
    c = network_config.channels
    if config.degrade_scope == "subimage" and f_sub % config.scale:
        raise ConfigError(
            f"f_sub {f_sub} is not divisible by scale {config.scale}; use degrade_scope='image'"
        )
    inputs, targets = [], []
    for k, hr in enumerate(hr_images):
        hr = np.asarray(hr, dtype=np.float64)
        if hr.shape[0] != c:
            raise ConfigError(f"image {k} has {hr.shape[0]} channels, network expects {c}")
        h, w = hr.shape[1:]
        if h < f_sub or w < f_sub:
            log.warning("image %d (%dx%d) is smaller than f_sub=%d; skipped", k, h, w, f_sub)
            continue
        whole = degrade(modcrop(hr, config.scale), config.scale, config.mode) if config.degrade_scope == "image" else None
        for y in crop_positions(h, f_sub, config.stride):
            for x in crop_positions(w, f_sub, config.stride):
                crop = hr[:, y : y + f_sub, x : x + f_sub]
                if whole is None:
                    lr = degrade(crop, config.scale, config.mode)
                else:
                    lr = whole[:, y : y + f_sub, x : x + f_sub]
                inputs.append(lr)
                targets.append(crop[:, off : off + out, off : off + out])
    if not inputs:
        return SampleSet(np.zeros((0, c, f_sub, f_sub), np.float32), np.zeros((0, c, out, out), np.float32))
    return SampleSet(np.stack(inputs).astype(np.float32), np.stack(targets).astype(np.float32))


ARCHIVE_MAGIC = b"SRSA"
ARCHIVE_VERSION = 1


def encode_samples(samples: SampleSet) -> bytes:
    """Header (magic, version, count, c, f_sub, out_size as u32 LE) + f32 LE input/target pairs."""
    n = len(samples)
    head = ARCHIVE_MAGIC + struct.pack("<5I", ARCHIVE_VERSION, n, samples.channels, samples.f_sub, samples.out_size)
    a = samples.inputs.reshape(n, -1).astype("<f4")
    b = samples.targets.reshape(n, -1).astype("<f4")
    return head + np.hstack([a, b]).tobytes()


def save_samples(path, samples: SampleSet) -> None:
    atomic_write_bytes(path, encode_samples(samples))


def load_samples(path) -> SampleSet:
    raw = Path(path).read_bytes()
    if len(raw) < 24:
        raise TruncatedFileError("sample archive header is truncated")
    if raw[:4] != ARCHIVE_MAGIC:
        raise FormatError(f"not a sample archive (magic {raw[:4]!r})")
    version, n, c, f_sub, out = struct.unpack_from("<5I", raw, 4)
    if version != ARCHIVE_VERSION:
        raise VersionError(f"sample archive version {version}, this build reads {ARCHIVE_VERSION}")
    per = c * (f_sub * f_sub + out * out)
    need = 24 + 4 * n * per
    if len(raw) < need:
        raise TruncatedFileError(f"sample archive has {len(raw)} of {need} bytes")
    flat = np.frombuffer(raw, "<f4", n * per, 24).astype(np.float32).reshape(n, per)
    k = c * f_sub * f_sub
    return SampleSet(flat[:, :k].reshape(n, c, f_sub, f_sub).copy(), flat[:, k:].reshape(n, c, out, out).copy())


# --------------------------------------------------------------------------
# loss and update


def _weights(channel_weights, channels: int) -> np.ndarray:
    w = np.asarray(channel_weights, dtype=np.float64)
    if w.shape != (channels,):
        raise ShapeError(f"{len(w)} channel weights for {channels} channels")
    return w


def loss_mse(pred: np.ndarray, target: np.ndarray, channel_weights=None) -> float:
    """Channel-weighted mean squared error.

    ``sum_c w_c * mean_{samples,pixels} (pred - target)^2 / sum_c w_c``.
    """
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ShapeError(f"shape mismatch {pred.shape} vs {target.shape}")
    c = pred.shape[-3]
    w = _weights(channel_weights if channel_weights is not None else (1.0,) * c, c)
    axes = tuple(i for i in range(pred.ndim) if i != pred.ndim - 3)
    d = pred.astype(np.float64) - target
    per_channel = np.mean(d * d, axis=axes)
    return float(np.dot(w, per_channel) / w.sum())


def loss_mse_grad(pred: np.ndarray, target: np.ndarray, channel_weights=None) -> np.ndarray:
    """Derivative of :func:`loss_mse` w.r.t. ``pred``."""
    c = pred.shape[-3]
    w = _weights(channel_weights if channel_weights is not None else (1.0,) * c, c)
    per_channel_count = pred.size // c
    scale = (2.0 * w / (w.sum() * per_channel_count)).astype(pred.dtype)
    return (pred - target) * scale.reshape((c, 1, 1))


@dataclass
class MomentumState:
    """Velocity buffers congruent with ``Network.parameters()``."""

    buffers: list[np.ndarray]

    @classmethod
    def zeros_like(cls, net: Network) -> "MomentumState":
        return cls([np.zeros_like(p) for p in net.parameters()])


def apply_update(net: Network, state: MomentumState, grads, lr_per_layer, momentum: float) -> None:
    """In place: ``delta = momentum * delta - lr * grad``; ``param += delta``."""
    for i, (bank, (gw, gb)) in enumerate(zip(net.banks, grads)):
        lr = np.asarray(lr_per_layer[i], dtype=bank.weights.dtype)
        m = np.asarray(momentum, dtype=bank.weights.dtype)
        for param, buf, g in ((bank.weights, state.buffers[2 * i], gw), (bank.biases, state.buffers[2 * i + 1], gb)):
            buf *= m
            buf -= lr * g
            param += buf


def sgd_step(
    net: Network,
    state: MomentumState,
    inputs: np.ndarray,
    targets: np.ndarray,
    config: TrainConfig,
    channel_weights=None,
) -> float:
    """One minibatch update; returns the batch loss before the update."""
    if len(inputs) == 0:
        raise ShapeError("empty batch")
    w = config.channel_weights if channel_weights is None else channel_weights
    x = np.asarray(inputs, dtype=net.dtype)
    t = np.asarray(targets, dtype=net.dtype)
    pred, cache = forward_with_cache(net, x)
    loss = loss_mse(pred, t, w)
    grads = backward(net, cache, loss_mse_grad(pred, t, w))
    apply_update(net, state, grads, config.lr_per_layer, config.momentum)
    return loss


# --------------------------------------------------------------------------
# training loop


def epoch_permutation(n: int, seed: int, epoch: int) -> np.ndarray:
    """Visiting order for ``epoch``; depends only on (seed, epoch) so resumes line up."""
    return np.random.default_rng([seed, epoch]).permutation(n)


def stream_indices(n: int, seed: int, start: int, count: int) -> np.ndarray:
    """Sample indices for stream positions ``start .. start + count - 1``.

    The stream is the concatenation of per-epoch permutations; a batch may
    straddle an epoch boundary.
    """
    out = np.empty(count, dtype=np.intp)
    pos = 0
    while pos < count:
        epoch, offset = divmod(start + pos, n)
        perm = epoch_permutation(n, seed, epoch)
        take = min(n - offset, count - pos)
        out[pos : pos + take] = perm[offset : offset + take]
        pos += take
    return out


def validation_psnr(net: Network, validation_set, shave: int) -> float:
    """Mean PSNR of ``predict_full`` outputs over ``(input, target)`` pairs."""
    vals = []
    for x, gt in validation_set:
        out = predict_full(net, x)
        vals.append(metrics.psnr(metrics.shave_border(out, shave), metrics.shave_border(gt, shave)))
    return float(np.mean(vals))


def make_validation_set(hr_images, config: TrainConfig) -> list[tuple[np.ndarray, np.ndarray]]:
    """Pairs of (bicubic-degraded input, ground truth) for whole images."""
    out = []
    for hr in hr_images:
        gt = modcrop(np.asarray(hr, dtype=np.float64), config.scale)
        out.append((degrade(gt, config.scale, config.mode), gt))
    return out


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    losses: list[float] = field(default_factory=list)
    log_rows: list[dict] = field(default_factory=list)


def _open_log(log_path) -> Optional[tuple]:
    if log_path is None:
        return None
    path = Path(log_path)
    new = not path.exists() or path.stat().st_size == 0
    fh = path.open("a", newline="")
    writer = csv.writer(fh, lineterminator="\n")
    if new:
        writer.writerow(LOG_HEADER)
        fh.flush()
    return fh, writer


def train_loop(
    net: Network,
    samples: SampleSet,
    config: TrainConfig,
    validation_set=None,
    log_path=None,
    checkpoint_path=None,
    state: Optional[MomentumState] = None,
    start_backprops: int = 0,
    channel_weights=None,
    stop_at: Optional[int] = None,
) -> TrainResult:
    """Train ``net`` in place until ``total_backprops`` samples have been processed.

    Resuming is a matter of passing the checkpoint's network, momentum and
    counter; the sample stream is a pure function of (seed, position), so the
    continuation matches an uninterrupted run exactly. ``stop_at`` ends the
    run early at that counter (used for staged schedules and tests).
    """
    n = len(samples)
    if n == 0:
        raise ShapeError("no training samples")
    config.check_network(net.config)
    if samples.channels != net.config.channels or samples.out_size != samples.f_sub - net.config.shrink:
        raise ShapeError("sample archive does not match the network geometry")
    if state is None:
        state = MomentumState.zeros_like(net)
    end = config.total_backprops if stop_at is None else min(stop_at, config.total_backprops)
    counter = start_backprops
    result = TrainResult(Checkpoint(net, state.buffers, counter))
    logf = _open_log(log_path)
    t0 = time.perf_counter()
    pending = []

    def validate():
        mean_loss = float(np.mean(pending)) if pending else math.nan
        val = validation_psnr(net, validation_set, config.scale) if validation_set else math.nan
        row = {
            "backprops": counter,
            "epoch": counter // n,
            "train_loss": mean_loss,
            "val_psnr": val,
            "elapsed_seconds": time.perf_counter() - t0,
        }
        result.log_rows.append(row)
        log.info("backprops=%d loss=%.6g val_psnr=%.4f", counter, mean_loss, val)
        if logf is not None:
            logf[1].writerow(
                [counter, row["epoch"], _num(mean_loss), _num(val), f"{row['elapsed_seconds']:.3f}"]
            )
            logf[0].flush()
        pending.clear()

    try:
        if counter == 0 and end > 0:
            validate()
        while counter < end:
            count = min(config.batch_size, end - counter)
            idx = stream_indices(n, config.seed, counter, count)
            loss = sgd_step(net, state, samples.inputs[idx], samples.targets[idx], config, channel_weights)
            result.losses.append(loss)
            pending.append(loss)
            if not math.isfinite(loss):
                raise FloatingPointError(f"loss diverged at backprop {counter}")
            prev, counter = counter, counter + count
            if counter // config.val_every > prev // config.val_every or counter == end:
                validate()
            if checkpoint_path is not None and (
                counter // config.checkpoint_every > prev // config.checkpoint_every or counter == end
            ):
                save_checkpoint(checkpoint_path, net, state.buffers, counter)
    finally:
        if logf is not None:
            logf[0].close()
    result.checkpoint = Checkpoint(net, state.buffers, counter)
    return result


def _num(v: float) -> str:
    return "" if math.isnan(v) else f"{v:.8g}"


# --------------------------------------------------------------------------
# color strategies

STRATEGIES = {
    "y": ("y", None, (1.0,)),
    "ycbcr": ("ycbcr", None, (1.0, 1.0, 1.0)),
    "y-pretrain": ("ycbcr", (1.0, 0.0, 0.0), (1.0, 1.0, 1.0)),
    "cbcr-pretrain": ("ycbcr", (0.0, 1.0, 1.0), (1.0, 1.0, 1.0)),
    "rgb": ("rgb", None, (1.0, 1.0, 1.0)),
}

_ALIASES = {"y only": "y", "y-only": "y", "y pre-train": "y-pretrain", "cbcr pre-train": "cbcr-pretrain"}


@dataclass(frozen=True)
class StrategyPlan:
    name: str
    space: str
    pretrain_weights: Optional[tuple[float, ...]]
    weights: tuple[float, ...]

    @property
    def channels(self) -> int:
        return 1 if self.space == "y" else 3


def strategy_plan(name: str) -> StrategyPlan:
    key = name.strip().lower()
    key = _ALIASES.get(key, key)
    if key not in STRATEGIES:
        raise ConfigError(f"unknown strategy {name!r}; choose from {sorted(STRATEGIES)}")
    return StrategyPlan(key, *STRATEGIES[key])


def to_space(rgb: np.ndarray, space: str, quantize_ycbcr: bool = True) -> np.ndarray:
    """Convert a [0,1] RGB tensor to the space a strategy trains in.

    YCbCr values are snapped to 8-bit levels by default, matching how the
    evaluation derives its ground truth.
    """
    rgb = np.asarray(rgb, dtype=np.float64)
    if space == "rgb":
        return rgb
    if rgb.shape[0] == 1:
        if space != "y":
            raise ConfigError("grayscale images cannot feed a 3-channel strategy")
        return rgb
    ycc = rgb_to_ycbcr(rgb)
    if quantize_ycbcr:
        ycc = quantize(ycc)
    return ycc[:1] if space == "y" else ycc


def run_strategy(
    strategy: str,
    rgb_images: Sequence[np.ndarray],
    sizes: str = "9-1-5",
    config: Optional[TrainConfig] = None,
    pretrain_backprops: int = 0,
    validation_images: Optional[Sequence[np.ndarray]] = None,
    filters=None,
    log_path=None,
) -> TrainResult:
    """Train a network with one of the color strategies.

    Pre-train variants run ``pretrain_backprops`` with the masked channel
    weights, then fine-tune on all channels until ``total_backprops``.
    """
    plan = strategy_plan(strategy)
    config = config or TrainConfig()
    net_cfg = NetworkConfig.parse(sizes, filters, channels=plan.channels)
    if len(config.lr_per_layer) != len(net_cfg.layers):
        config = replace(
            config, lr_per_layer=default_learning_rates(len(net_cfg.layers), config.f_sub - net_cfg.shrink)
        )
    config = replace(config, channel_weights=plan.weights)
    images = [to_space(im, plan.space) for im in rgb_images]
    samples = extract_subimages([modcrop(im, config.scale) for im in images], config, net_cfg)
    val = None
    if validation_images:
        val = make_validation_set([to_space(im, plan.space) for im in validation_images], config)
    net = init_network(net_cfg, config.seed)
    state = MomentumState.zeros_like(net)
    losses, rows = [], []
    counter = 0
    if plan.pretrain_weights is not None and pretrain_backprops > 0:
        first = train_loop(
            net, samples, config, val, log_path, state=state,
            channel_weights=plan.pretrain_weights, stop_at=pretrain_backprops,
        )
        losses += first.losses
        rows += first.log_rows
        counter = first.checkpoint.backprops
    rest = train_loop(net, samples, config, val, log_path, state=state, start_backprops=counter)
    result = TrainResult(rest.checkpoint, losses + rest.losses, rows + rest.log_rows)
    result.checkpoint.extra.update(strategy=plan.name, space=plan.space)
    return result
