"""Layer configuration, parameters, inference and checkpoint files."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import tensor
from .errors import ConfigError, FormatError, ShapeError, TruncatedFileError, VersionError
from .image_io import ImageU8, atomic_write_bytes, save_image
from .tensor import FilterBank

# filter counts used when a config string gives only filter sizes
DEFAULT_FILTERS = (64, 32, 16)
INIT_STD = 0.001


@dataclass(frozen=True)
class NetworkConfig:
    """Ordered ``(filter_size, n_filters)`` pairs; the last layer emits ``channels`` maps."""

    channels: int
    layers: tuple[tuple[int, int], ...]

    def __post_init__(self):
        layers = tuple((int(f), int(n)) for f, n in self.layers)
        if self.channels < 1:
            raise ConfigError(f"channels must be >= 1, got {self.channels}")
        if len(layers) < 1:
            raise ConfigError("a network needs at least one layer")
        for f, n in layers:
            if f < 1 or f % 2 == 0:
                raise ConfigError(f"filter sizes must be odd and positive, got {f}")
            if n < 1:
                raise ConfigError(f"filter counts must be positive, got {n}")
        if layers[-1][1] != self.channels:
            layers = layers[:-1] + ((layers[-1][0], self.channels),)
        object.__setattr__(self, "layers", layers)

    @classmethod
    def parse(cls, sizes: str, filters: Optional[Sequence[int]] = None, channels: int = 1) -> "NetworkConfig":
        """Build from the dash notation, e.g. ``"9-1-5"`` or ``"9-3-1-5"``.

        Hidden layers default to 64, 32, then 16 filters for every further layer.
        """
        try:
            fs = [int(s) for s in sizes.strip().split("-")]
        except ValueError:
            raise ConfigError(f"bad layer notation {sizes!r}") from None
        n_hidden = len(fs) - 1
        if filters is None:
            filters = [DEFAULT_FILTERS[min(i, len(DEFAULT_FILTERS) - 1)] for i in range(n_hidden)]
        filters = list(filters)
        if len(filters) != n_hidden:
            raise ConfigError(f"{sizes!r} needs {n_hidden} filter counts, got {len(filters)}")
        return cls(channels, tuple(zip(fs, filters + [channels])))

    @property
    def notation(self) -> str:
        return "-".join(str(f) for f, _ in self.layers)

    @property
    def shrink(self) -> int:
        """Pixels lost per spatial dimension by valid convolutions."""
        return sum(f - 1 for f, _ in self.layers)

    def bank_shapes(self) -> list[tuple[int, int, int]]:
        """``(n_out, n_in, f)`` per layer."""
        shapes = []
        n_in = self.channels
        for f, n in self.layers:
            shapes.append((n, n_in, f))
            n_in = n
        return shapes


def count_weights(config: NetworkConfig) -> int:
    """Number of filter weights, biases excluded."""
    return sum(n_out * n_in * f * f for n_out, n_in, f in config.bank_shapes())


def count_biases(config: NetworkConfig) -> int:
    return sum(n for _, n in config.layers)


def receptive_field(config: NetworkConfig) -> int:
    """Side length of the input square that influences one output pixel."""
    return 1 + config.shrink


@dataclass
class Network:
    config: NetworkConfig
    banks: list[FilterBank]

    def __post_init__(self):
        shapes = self.config.bank_shapes()
        if len(shapes) != len(self.banks):
            raise ConfigError(f"config has {len(shapes)} layers, got {len(self.banks)} filter banks")
        for i, ((n_out, n_in, f), bank) in enumerate(zip(shapes, self.banks)):
            if (bank.n_out, bank.n_in, bank.f) != (n_out, n_in, f):
                raise ConfigError(
                    f"layer {i}: bank is {bank.n_out}x{bank.n_in}x{bank.f}, config wants {n_out}x{n_in}x{f}"
                )

    @property
    def dtype(self):
        return self.banks[0].weights.dtype

    def copy(self) -> "Network":
        return Network(self.config, [b.copy() for b in self.banks])

    def parameters(self) -> list[np.ndarray]:
        """Weight and bias arrays in checkpoint order."""
        out = []
        for b in self.banks:
            out += [b.weights, b.biases]
        return out

    def astype(self, dtype) -> "Network":
        return Network(
            self.config, [FilterBank(b.weights.astype(dtype), b.biases.astype(dtype)) for b in self.banks]
        )


def init_network(config: NetworkConfig, seed: int = 0, dtype=np.float32, std: float = INIT_STD) -> Network:
    """Gaussian(0, std) weights drawn layer by layer from one seeded generator; zero biases."""
    rng = np.random.default_rng(seed)
    banks = []
    for n_out, n_in, f in config.bank_shapes():
        w = rng.normal(0.0, std, size=(n_out, n_in, f, f)).astype(dtype)
        banks.append(FilterBank(w, np.zeros(n_out, dtype=dtype)))
    return Network(config, banks)


def _check_input(net: Network, x: np.ndarray) -> None:
    if x.ndim not in (3, 4):
        raise ShapeError(f"expected (C,H,W) or (B,C,H,W) input, got {x.shape}")
    c = x.shape[-3]
    if c != net.config.channels:
        raise ConfigError(f"network expects {net.config.channels} channels, input has {c}")
    h, w = x.shape[-2:]
    need = receptive_field(net.config)
    if h < need or w < need:
        raise ShapeError(f"input {h}x{w} is smaller than the {need}x{need} receptive field")


def _nhwc(x: np.ndarray, dtype) -> tuple[np.ndarray, bool]:
    squeeze = x.ndim == 3
    xb = x[None] if squeeze else x
    return np.ascontiguousarray(xb.transpose(0, 2, 3, 1), dtype=dtype), squeeze


def _nchw(x: np.ndarray, squeeze: bool) -> np.ndarray:
    x = np.ascontiguousarray(x.transpose(0, 3, 1, 2))
    return x[0] if squeeze else x


def forward(net: Network, x: np.ndarray) -> np.ndarray:
    """Valid-mode inference; ReLU after every layer except the last."""
    return forward_with_cache(net, x, keep=False)[0]


def forward_with_cache(net: Network, x: np.ndarray, keep: bool = True) -> tuple[np.ndarray, list]:
    """Like :func:`forward` but also returns what :func:`backward` needs."""
    x = np.asarray(x)
    _check_input(net, x)
    h, squeeze = _nhwc(x, net.dtype)
    cache = []
    last = len(net.banks) - 1
    for i, bank in enumerate(net.banks):
        z = tensor.conv2d_valid_nhwc(h, bank.hwio(), bank.biases)
        if keep:
            cache.append((h, z))
        h = tensor.relu(z) if i < last else z
    return _nchw(h, squeeze), cache


def backward(net: Network, cache: list, grad_out: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Per-layer ``(grad_weights, grad_biases)`` for the cached forward pass.

    ``grad_out`` is laid out like the forward output.
    """
    g, _ = _nhwc(np.asarray(grad_out), net.dtype)
    grads = [None] * len(net.banks)
    last = len(net.banks) - 1
    for i in range(last, -1, -1):
        h, z = cache[i]
        if i < last:
            g = tensor.relu_backward(z, g)
        g_in, gw, gb = tensor.conv2d_backward_nhwc(h, net.banks[i].hwio(), g, need_input_grad=i > 0)
        grads[i] = (np.ascontiguousarray(gw.transpose(3, 2, 0, 1)), gb)
        g = g_in
    return grads


def predict_full(net: Network, x: np.ndarray) -> np.ndarray:
    """Same-size inference: replicate-pad by half the total shrink, then :func:`forward`."""
    x = np.asarray(x)
    p = net.config.shrink // 2
    pad = [(0, 0)] * (x.ndim - 2) + [(p, p), (p, p)]
    return forward(net, np.pad(x, pad, mode="edge") if p else x)


# --------------------------------------------------------------------------
# checkpoints

CHECKPOINT_MAGIC = b"SRCN"
CHECKPOINT_VERSION = 1
_FLAG_MOMENTUM = 1


@dataclass
class Checkpoint:
    network: Network
    momentum: Optional[list[np.ndarray]] = None
    backprops: int = 0
    extra: dict = field(default_factory=dict)


def encode_checkpoint(net: Network, momentum: Optional[Sequence[np.ndarray]] = None, backprops: int = 0) -> bytes:
    cfg = net.config
    head = [CHECKPOINT_MAGIC, struct.pack("<III", CHECKPOINT_VERSION, cfg.channels, len(cfg.layers))]
    for f, n in cfg.layers:
        head.append(struct.pack("<II", f, n))
    head.append(struct.pack("<BQ", _FLAG_MOMENTUM if momentum is not None else 0, backprops))
    arrays = list(net.parameters())
    if momentum is not None:
        if len(momentum) != len(arrays):
            raise ConfigError("momentum buffers do not match the network parameters")
        arrays += list(momentum)
    body = b"".join(np.ascontiguousarray(a, dtype="<f4").tobytes() for a in arrays)
    return b"".join(head) + body


def save_checkpoint(path, net: Network, momentum=None, backprops: int = 0) -> None:
    """Write a checkpoint atomically (temporary file, then rename)."""
    atomic_write_bytes(path, encode_checkpoint(net, momentum, backprops))


def decode_checkpoint(raw: bytes) -> Checkpoint:
    if len(raw) < 16:
        raise TruncatedFileError("checkpoint header is truncated")
    if raw[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"not a checkpoint file (magic {raw[:4]!r})")
    version, channels, n_layers = struct.unpack_from("<III", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise VersionError(f"checkpoint version {version}, this build reads {CHECKPOINT_VERSION}")
    pos = 16
    if len(raw) < pos + 8 * n_layers + 9:
        raise TruncatedFileError("checkpoint header is truncated")
    layers = [struct.unpack_from("<II", raw, pos + 8 * i) for i in range(n_layers)]
    pos += 8 * n_layers
    flags, backprops = struct.unpack_from("<BQ", raw, pos)
    pos += 9
    config = NetworkConfig(channels, tuple(layers))
    shapes = []
    for n_out, n_in, f in config.bank_shapes():
        shapes += [(n_out, n_in, f, f), (n_out,)]
    if flags & _FLAG_MOMENTUM:
        shapes = shapes + shapes
    need = sum(math.prod(s) for s in shapes) * 4
    if len(raw) - pos < need:
        raise TruncatedFileError(f"checkpoint payload has {len(raw) - pos} of {need} bytes")
    if len(raw) - pos > need:
        raise FormatError("checkpoint has trailing bytes")
    arrays = []
    for s in shapes:
        n = math.prod(s)
        arrays.append(np.frombuffer(raw, "<f4", n, pos).astype(np.float32).reshape(s))
        pos += 4 * n
    k = 2 * n_layers
    banks = [FilterBank(arrays[2 * i], arrays[2 * i + 1]) for i in range(n_layers)]
    momentum = arrays[k:] if flags & _FLAG_MOMENTUM else None
    return Checkpoint(Network(config, banks), momentum, backprops)


def load_checkpoint(path) -> Checkpoint:
    return decode_checkpoint(Path(path).read_bytes())


# --------------------------------------------------------------------------
# filter visualization


def filter_tiles(net: Network, layer: int) -> np.ndarray:
    """8-bit tiles ``(N, f, f)`` of one layer, ordered by descending weight variance.

    Each ``(out, in)`` filter slice is one tile, min-max stretched to [0, 255];
    constant filters render as 128.
    """
    if not 0 <= layer < len(net.banks):
        raise ConfigError(f"layer {layer} out of range 0..{len(net.banks) - 1}")
    w = net.banks[layer].weights.astype(np.float64)
    f = w.shape[-1]
    flat = w.reshape(-1, f, f)
    var = flat.reshape(len(flat), -1).var(axis=1)
    order = np.argsort(-var, kind="stable")
    tiles = np.empty(flat.shape, dtype=np.uint8)
    for k, idx in enumerate(order):
        t = flat[idx]
        lo, hi = t.min(), t.max()
        if hi > lo:
            tiles[k] = np.floor((t - lo) / (hi - lo) * 255.0 + 0.5).astype(np.uint8)
        else:
            tiles[k] = 128
    return tiles


def tile_grid(tiles: np.ndarray, gap: int = 1, background: int = 255) -> ImageU8:
    n, f, _ = tiles.shape
    cols = int(math.ceil(math.sqrt(n)))
    rows = int(math.ceil(n / cols))
    grid = np.full((rows * (f + gap) + gap, cols * (f + gap) + gap), background, dtype=np.uint8)
    for k in range(n):
        r, c = divmod(k, cols)
        y, x = gap + r * (f + gap), gap + c * (f + gap)
        grid[y : y + f, x : x + f] = tiles[k]
    return ImageU8(grid)


def export_filters(net: Network, layer: int, path) -> ImageU8:
    """Write the filter grid of ``layer`` as an image file and return it."""
    grid = tile_grid(filter_tiles(net, layer))
    save_image(path, grid)
    return grid
