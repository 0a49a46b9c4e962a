"""8-bit image files (PNG and BMP via Pillow, binary PGM/PPM) and color conversion.

Files are read into :class:`ImageU8`, which keeps samples interleaved as
``(height, width, channels)`` the way they are stored on disk.  Numerical
code works on planar float tensors; :func:`to_float` and :func:`to_u8`
convert between the two.
"""

from __future__ import annotations

import enum
import io
import logging
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import ConfigError, FormatError, ShapeError, TruncatedFileError, UnsupportedFormatError

log = logging.getLogger(__name__)

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


class ColorSpace(enum.Enum):
    GRAY = "gray"
    RGB = "rgb"
    YCBCR = "ycbcr"

    @property
    def channels(self) -> int:
        return 1 if self is ColorSpace.GRAY else 3


@dataclass
class ImageU8:
    """Interleaved 8-bit image, ``data.shape == (height, width, channels)``."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3 or data.shape[2] not in (1, 3):
            raise ShapeError(f"expected (H,W,1) or (H,W,3) samples, got {data.shape}")
        if data.dtype != np.uint8:
            if data.size and (data.min() < 0 or data.max() > 255):
                raise ShapeError("8-bit samples must lie in [0, 255]")
            data = data.astype(np.uint8)
        self.data = data

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


# --------------------------------------------------------------------------
# conversions


def to_float(img: ImageU8) -> np.ndarray:
    """Planar ``(C,H,W)`` float64 tensor in [0, 1]."""
    return np.ascontiguousarray(img.data.transpose(2, 0, 1), dtype=np.float64) / 255.0


def to_u8(t: np.ndarray) -> ImageU8:
    """Clamp to [0, 1], scale by 255 and round half away from zero."""
    t = np.asarray(t, dtype=np.float64)
    if t.ndim == 2:
        t = t[None]
    if t.ndim != 3:
        raise ShapeError(f"expected (C,H,W) tensor, got shape {t.shape}")
    v = np.clip(t, 0.0, 1.0) * 255.0
    # values are non-negative, so floor(v + 0.5) is round-half-away-from-zero
    q = np.floor(v + 0.5).astype(np.uint8)
    return ImageU8(q.transpose(1, 2, 0))


def quantize(t: np.ndarray) -> np.ndarray:
    """Snap [0, 1] values to the nearest 8-bit level, as a save/load round trip would."""
    return np.floor(np.clip(t, 0.0, 1.0) * 255.0 + 0.5) / 255.0


_RGB2YCBCR = np.array(
    [[65.481, 128.553, 24.966], [-37.797, -74.203, 112.0], [112.0, -93.786, -18.214]]
) / 255.0
_YCBCR_OFFSET = np.array([16.0, 128.0, 128.0]) / 255.0
_YCBCR2RGB = np.linalg.inv(_RGB2YCBCR)


def _check3(t: np.ndarray) -> np.ndarray:
    t = np.asarray(t)
    if t.ndim != 3 or t.shape[0] != 3:
        raise ConfigError(f"color conversion needs a 3-channel (3,H,W) tensor, got {t.shape}")
    return t


def rgb_to_ycbcr(t: np.ndarray) -> np.ndarray:
    """BT.601 studio-swing conversion on [0, 1] tensors."""
    t = _check3(t).astype(np.float64)
    return np.tensordot(_RGB2YCBCR, t, axes=1) + _YCBCR_OFFSET[:, None, None]


def ycbcr_to_rgb(t: np.ndarray) -> np.ndarray:
    t = _check3(t).astype(np.float64)
    return np.tensordot(_YCBCR2RGB, t - _YCBCR_OFFSET[:, None, None], axes=1)


def luminance(t: np.ndarray) -> np.ndarray:
    """Y channel ``(1,H,W)`` of an RGB tensor; gray input is returned unchanged."""
    t = np.asarray(t)
    if t.shape[0] == 1:
        return t
    return rgb_to_ycbcr(t)[:1]


# --------------------------------------------------------------------------
# file formats


def load_image(path) -> ImageU8:
    """Read a PNG, binary PGM/PPM or uncompressed BMP file."""
    raw = Path(path).read_bytes()
    if raw.startswith(PNG_SIGNATURE) or raw[:2] == b"BM":
        return _decode_pillow(raw, path)
    if raw[:2] in (b"P5", b"P6"):
        return decode_pnm(raw)
    if raw[:2] in (b"P1", b"P2", b"P3", b"P4"):
        raise UnsupportedFormatError(f"{path}: only binary PGM (P5) and PPM (P6) are supported")
    raise UnsupportedFormatError(f"{path}: unrecognized image format")


def save_image(path, img: ImageU8) -> None:
    """Write ``img``; the extension picks the format (``.png``, ``.pgm``, ``.ppm``)."""
    ext = Path(path).suffix.lower()
    if ext == ".png":
        payload = encode_png(img)
    elif ext in (".pgm", ".ppm", ".pnm"):
        if ext == ".pgm" and img.channels != 1 or ext == ".ppm" and img.channels != 3:
            raise UnsupportedFormatError(f"{ext} cannot hold a {img.channels}-channel image")
        payload = encode_pnm(img)
    else:
        raise UnsupportedFormatError(f"cannot write {ext!r} files")
    Path(path).write_bytes(payload)


# PNM


def _pnm_tokens(raw: bytes, count: int) -> tuple[list[int], int]:
    """Read ``count`` whitespace-separated header integers, skipping comments."""
    pos = 2
    out = []
    n = len(raw)
    while len(out) < count:
        while pos < n and raw[pos : pos + 1].isspace():
            pos += 1
        if pos < n and raw[pos : pos + 1] == b"#":
            while pos < n and raw[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and raw[pos : pos + 1].isdigit():
            pos += 1
        if start == pos:
            if pos >= n:
                raise TruncatedFileError("PNM header ends early")
            raise FormatError(f"bad PNM header byte {raw[pos:pos + 1]!r}")
        out.append(int(raw[start:pos]))
    if pos >= n or not raw[pos : pos + 1].isspace():
        raise TruncatedFileError("PNM header ends early")
    return out, pos + 1


def decode_pnm(raw: bytes) -> ImageU8:
    channels = 1 if raw[:2] == b"P5" else 3
    (w, h, maxval), start = _pnm_tokens(raw, 3)
    if maxval != 255:
        raise UnsupportedFormatError(f"PNM maxval {maxval} is not 8-bit")
    if w == 0 or h == 0:
        raise FormatError("PNM image has zero size")
    need = w * h * channels
    body = raw[start : start + need]
    if len(body) < need:
        raise TruncatedFileError(f"PNM payload has {len(body)} of {need} bytes")
    return ImageU8(np.frombuffer(body, dtype=np.uint8).reshape(h, w, channels).copy())


def encode_pnm(img: ImageU8) -> bytes:
    magic = b"P5" if img.channels == 1 else b"P6"
    header = magic + b"\n%d %d\n255\n" % (img.width, img.height)
    return header + np.ascontiguousarray(img.data).tobytes()


# PNG and BMP (via Pillow)

# Pillow modes accepted on load and how they map to 1 or 3 channels
_PIL_MODES = {"L": "L", "1": "L", "LA": "L", "P": "RGB", "PA": "RGB", "RGB": "RGB", "RGBA": "RGB"}


def _decode_pillow(raw: bytes, path) -> ImageU8:
    try:
        with Image.open(io.BytesIO(raw)) as im:
            im.load()
            if im.mode not in _PIL_MODES:
                raise UnsupportedFormatError(f"{path}: pixel mode {im.mode} is not 8-bit gray or RGB")
            if getattr(im, "n_frames", 1) > 1:
                log.warning("%s: using the first of %d frames", path, im.n_frames)
            target = _PIL_MODES[im.mode]
            if im.mode == "P" and "transparency" not in im.info:
                # gray palettes stay single-channel
                pal = np.asarray(im.convert("RGB"))
                if np.array_equal(pal[..., 0], pal[..., 1]) and np.array_equal(pal[..., 1], pal[..., 2]):
                    return ImageU8(np.ascontiguousarray(pal[..., :1]))
            arr = np.asarray(im.convert(target) if im.mode != target else im)
    except UnidentifiedImageError as exc:
        raise FormatError(f"{path}: corrupt or unrecognized image data") from exc
    except (OSError, SyntaxError, ValueError, EOFError) as exc:
        if isinstance(exc, EOFError) or "truncated" in str(exc).lower():
            raise TruncatedFileError(f"{path}: {exc}") from exc
        raise FormatError(f"{path}: {exc}") from exc
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return ImageU8(np.ascontiguousarray(arr, dtype=np.uint8))


def encode_png(img: ImageU8) -> bytes:
    """Non-interlaced 8-bit gray or RGB PNG."""
    data = img.data[:, :, 0] if img.channels == 1 else img.data
    buf = io.BytesIO()
    Image.fromarray(np.ascontiguousarray(data)).save(buf, format="PNG")
    return buf.getvalue()


IMAGE_SUFFIXES = (".png", ".pgm", ".ppm", ".pnm", ".bmp")


def list_images(directory) -> list[Path]:
    """Image files in ``directory``, sorted by name."""
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"{d} is not a directory")
    return sorted(p for p in d.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES and p.is_file())


def atomic_write_bytes(path, payload: bytes) -> None:
    """Write to a temporary sibling and rename over ``path``."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(payload)
    os.replace(tmp, path)
