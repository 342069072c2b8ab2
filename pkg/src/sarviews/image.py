"""Grayscale raster type, quantization, cropping, blurring and PGM/PNG I/O.

Intensities live in [0, 1] as float64; 8-bit values only appear at file
boundaries.
"""

from __future__ import annotations

import io
import math
import os
import re
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import BoundsError, FormatError, IoError, ParamError

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"
BT601 = (0.299, 0.587, 0.114)


@dataclass(frozen=True, eq=False)
class GrayImage:
    """Row-major intensity raster, shape (height, width), values in [0, 1]."""

    pixels: np.ndarray

    def __post_init__(self):
        arr = np.array(self.pixels, dtype=np.float64, copy=True)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ParamError(f"GrayImage needs a non-empty 2-D array, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0:
            raise ParamError("GrayImage intensities must lie in [0, 1]")
        arr.setflags(write=False)
        object.__setattr__(self, "pixels", arr)

    @classmethod
    def from_data(cls, width: int, height: int, data) -> GrayImage:
        flat = np.asarray(data, dtype=np.float64).ravel()
        if flat.size != width * height:
            raise ParamError(f"data length {flat.size} != {width}x{height}")
        return cls(flat.reshape(height, width))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape

    @property
    def data(self) -> np.ndarray:
        return self.pixels.ravel()

    def __eq__(self, other):
        if not isinstance(other, GrayImage):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.pixels, other.pixels)

    __hash__ = None

    def to_bytes(self) -> np.ndarray:
        return np.rint(self.pixels * 255.0).astype(np.uint8)


@dataclass(frozen=True, eq=False)
class QuantizedImage:
    indices: np.ndarray
    levels: int

    def __post_init__(self):
        _check_levels(self.levels)
        idx = np.array(self.indices, dtype=np.int64, copy=True)
        if idx.ndim != 2 or idx.size == 0:
            raise ParamError(f"QuantizedImage needs a non-empty 2-D array, got shape {idx.shape}")
        if idx.min() < 0 or idx.max() >= self.levels:
            raise ParamError(f"level indices must lie in [0, {self.levels - 1}]")
        idx.setflags(write=False)
        object.__setattr__(self, "indices", idx)

    @property
    def width(self) -> int:
        return self.indices.shape[1]

    @property
    def height(self) -> int:
        return self.indices.shape[0]


class Rect(NamedTuple):
    """Inclusive pixel rectangle."""

    x0: int
    y0: int
    x1: int
    y1: int

    @property
    def width(self) -> int:
        return self.x1 - self.x0 + 1

    @property
    def height(self) -> int:
        return self.y1 - self.y0 + 1

    def fits(self, width: int, height: int) -> bool:
        return 0 <= self.x0 <= self.x1 < width and 0 <= self.y0 <= self.y1 < height

    def contains(self, other: Rect) -> bool:
        return (self.x0 <= other.x0 and self.y0 <= other.y0
                and other.x1 <= self.x1 and other.y1 <= self.y1)

    def compose(self, inner: Rect) -> Rect:
        """Map ``inner`` (given in this rect's local coordinates) to host coordinates."""
        return Rect(self.x0 + inner.x0, self.y0 + inner.y0,
                    self.x0 + inner.x1, self.y0 + inner.y1)

    def to_json(self) -> dict:
        return {"x0": int(self.x0), "y0": int(self.y0), "x1": int(self.x1), "y1": int(self.y1)}

    @classmethod
    def full(cls, width: int, height: int) -> Rect:
        return cls(0, 0, width - 1, height - 1)


def _check_levels(levels):
    if not isinstance(levels, (int, np.integer)) or not 2 <= levels <= 256:
        raise ParamError(f"levels must be an integer in [2, 256], got {levels!r}")


# ---------------------------------------------------------------------------
# File I/O
# ---------------------------------------------------------------------------

_PGM_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*([^\s#]+)")


def _parse_pgm(raw: bytes) -> GrayImage:
    pos = 0
    fields = []
    for name in ("magic", "width", "height", "maxval"):
        m = _PGM_TOKEN.match(raw, pos)
        if m is None:
            raise FormatError(f"PGM header truncated before {name}", field=name)
        fields.append(m.group(1))
        pos = m.end()
    magic, width, height, maxval = fields
    if magic != b"P5":
        raise FormatError(f"unsupported PGM magic {magic!r} (only binary P5)", field="magic")
    values = {}
    for name, token in (("width", width), ("height", height), ("maxval", maxval)):
        if not token.isdigit():
            raise FormatError(f"PGM {name} is not a decimal integer: {token!r}", field=name)
        values[name] = int(token)
    if values["width"] < 1 or values["height"] < 1:
        raise FormatError("PGM dimensions must be positive", field="width" if values["width"] < 1 else "height")
    if values["maxval"] != 255:
        raise FormatError(f"unsupported PGM maxval {values['maxval']} (only 8-bit, maxval 255)", field="maxval")
    if pos >= len(raw) or raw[pos:pos + 1] not in (b" ", b"\t", b"\n", b"\r"):
        raise FormatError("PGM header must end with a single whitespace byte", field="maxval")
    payload = raw[pos + 1:]
    expected = values["width"] * values["height"]
    if len(payload) != expected:
        raise FormatError(f"PGM payload has {len(payload)} bytes, header declares {expected}", field="payload")
    arr = np.frombuffer(payload, dtype=np.uint8).reshape(values["height"], values["width"])
    return GrayImage(arr / 255.0)


def _parse_png(raw: bytes) -> GrayImage:
    try:
        im = Image.open(io.BytesIO(raw))
        im.load()
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise FormatError(f"cannot decode PNG: {exc}", field="data") from exc
    mode = im.mode
    if mode in ("LA", "RGBA", "P", "PA"):
        im = im.convert("RGB" if mode in ("RGBA", "P", "PA") else "L")
    elif mode not in ("L", "RGB"):
        raise FormatError(f"unsupported PNG mode {mode!r} (need 8-bit gray or RGB)", field="bit_depth")
    arr = np.asarray(im, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr[..., 0] * BT601[0] + arr[..., 1] * BT601[1] + arr[..., 2] * BT601[2]
    return GrayImage(np.clip(arr / 255.0, 0.0, 1.0))


def decode_image(raw: bytes) -> GrayImage:
    if raw.startswith(PNG_SIGNATURE):
        return _parse_png(raw)
    if raw[:1] == b"P":
        return _parse_pgm(raw)
    raise FormatError("unrecognised file signature (expected P5 PGM or PNG)", field="magic")


def load_image(path) -> GrayImage:
    """Read an 8-bit binary PGM or 8-bit gray/RGB PNG into a normalized GrayImage.

    RGB input is reduced with BT.601 luma weights before scaling by 1/255.
    """
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read {os.fspath(path)!r}: {exc.strerror or exc}") from exc
    return decode_image(raw)


def encode_pgm(img: GrayImage) -> bytes:
    header = f"P5\n{img.width} {img.height}\n255\n".encode("ascii")
    return header + img.to_bytes().tobytes()


def save_pgm(img: GrayImage, path) -> None:
    try:
        with open(path, "wb") as fh:
            fh.write(encode_pgm(img))
    except OSError as exc:
        raise IoError(f"cannot write {os.fspath(path)!r}: {exc.strerror or exc}") from exc


# ---------------------------------------------------------------------------
# Pixel operations
# ---------------------------------------------------------------------------

def quantize(img: GrayImage, levels: int) -> QuantizedImage:
    """Uniform-width binning: ``min(floor(i * levels), levels - 1)``."""
    _check_levels(levels)
    idx = np.minimum(np.floor(img.pixels * levels), levels - 1).astype(np.int64)
    return QuantizedImage(idx, int(levels))


def dequantize(q: QuantizedImage) -> GrayImage:
    """Map each level index to its bin center."""
    return GrayImage((q.indices + 0.5) / q.levels)


def crop(img: GrayImage, rect: Rect) -> GrayImage:
    rect = Rect(*rect)
    if not rect.fits(img.width, img.height):
        raise BoundsError(f"rect {tuple(rect)} outside {img.width}x{img.height} image")
    return GrayImage(img.pixels[rect.y0:rect.y1 + 1, rect.x0:rect.x1 + 1])


def gaussian_kernel(sigma: float) -> np.ndarray:
    radius = math.ceil(3.0 * sigma)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    with np.errstate(over="ignore"):  # tiny sigma: off-center weights underflow to 0, as intended
        k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def _correlate_edge(arr: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    radius = len(kernel) // 2
    pad = [(0, 0), (0, 0)]
    pad[axis] = (radius, radius)
    padded = np.pad(arr, pad, mode="edge")
    n = arr.shape[axis]
    out = np.zeros_like(arr)
    for i, w in enumerate(kernel):
        out += w * np.take(padded, np.arange(i, i + n), axis=axis)
    return out


def gaussian_blur(img: GrayImage, sigma: float) -> GrayImage:
    """Separable Gaussian blur, radius ceil(3*sigma), edge-clamped borders."""
    if not sigma >= 0 or not math.isfinite(sigma):
        raise ParamError(f"sigma must be finite and >= 0, got {sigma!r}")
    if sigma == 0:
        return img
    k = gaussian_kernel(sigma)
    out = _correlate_edge(_correlate_edge(img.pixels, k, axis=1), k, axis=0)
    return GrayImage(np.clip(out, 0.0, 1.0))


def block_mean(img: GrayImage, factor: int) -> GrayImage:
    """Area-average downsampling by an integer factor (trailing remainder dropped)."""
    if factor < 1:
        raise ParamError("factor must be >= 1")
    h, w = img.height // factor, img.width // factor
    if h < 1 or w < 1:
        raise ParamError(f"image {img.width}x{img.height} smaller than factor {factor}")
    arr = img.pixels[:h * factor, :w * factor].reshape(h, factor, w, factor)
    return GrayImage(np.clip(arr.mean(axis=(1, 3)), 0.0, 1.0))
