"""Grayscale image buffers, PGM I/O, normalization, fidelity metrics, aHash."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from .errors import MalformedHeader, ShapeMismatch, TooSmall, TruncatedPayload, UnsupportedDepth

DEPTH = 8
MAXVAL = 255
SSIM_C1 = (0.01 * 255) ** 2
SSIM_C2 = (0.03 * 255) ** 2


@dataclass(frozen=True, eq=False)
class ImageBuffer:
    """8-bit grayscale image; ``pixels`` is an H x W uint8 array (row-major)."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 2 or px.shape[0] < 1 or px.shape[1] < 1:
            raise ShapeMismatch(f"image must be a non-empty 2-D grid, got {px.shape}")
        if px.dtype != np.uint8:
            if px.size and (px.min() < 0 or px.max() > MAXVAL):
                raise ValueError("pixel values must lie in [0, 255]")
            px = px.astype(np.uint8)
        px = np.ascontiguousarray(px)
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def depth(self) -> int:
        return DEPTH

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape

    def __eq__(self, other):
        if not isinstance(other, ImageBuffer):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.pixels, other.pixels)

    def __hash__(self):
        return hash((self.shape, self.pixels.tobytes()))

    def __repr__(self):
        return f"ImageBuffer({self.width}x{self.height})"

    @classmethod
    def from_list(cls, width: int, height: int, values) -> "ImageBuffer":
        arr = np.asarray(values, dtype=np.int64)
        if arr.size != width * height:
            raise ShapeMismatch(f"{arr.size} values for a {width}x{height} image")
        return cls(arr.reshape(height, width))

    def digest(self) -> str:
        """SHA-256 (hex) of the canonical P5 encoding."""
        return hashlib.sha256(write_pgm(self)).hexdigest()


# -- PGM -----------------------------------------------------------------------

_WS = b" \t\n\r\v\f"


def _header_tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    """Read ``count`` whitespace-separated tokens after the magic, skipping comments.

    Returns the tokens and the offset just past the final token.
    """
    pos, tokens, n = 2, [], len(data)
    while len(tokens) < count:
        while pos < n and (data[pos] in _WS or data[pos] == ord("#")):
            if data[pos] == ord("#"):
                while pos < n and data[pos] not in b"\r\n":
                    pos += 1
            else:
                pos += 1
        start = pos
        while pos < n and data[pos] not in _WS and data[pos] != ord("#"):
            pos += 1
        if start == pos:
            raise MalformedHeader("header ended early")
        tokens.append(data[start:pos])
    return tokens, pos


def _to_int(tok: bytes, what: str) -> int:
    if not tok.isdigit():
        raise MalformedHeader(f"bad {what}: {tok!r}")
    return int(tok)


def read_pgm(data: bytes) -> ImageBuffer:
    """Parse a P5 (binary) or P2 (ASCII) PGM with maxval <= 255."""
    data = bytes(data)
    magic = data[:2]
    if magic not in (b"P5", b"P2"):
        raise MalformedHeader(f"bad magic {magic!r}")
    tokens, pos = _header_tokens(data, 3)
    width = _to_int(tokens[0], "width")
    height = _to_int(tokens[1], "height")
    maxval = _to_int(tokens[2], "maxval")
    if width < 1 or height < 1:
        raise MalformedHeader(f"bad dimensions {width}x{height}")
    if maxval < 1 or maxval >= 65536:
        raise MalformedHeader(f"bad maxval {maxval}")
    if maxval > MAXVAL:
        raise UnsupportedDepth(f"maxval {maxval} needs more than 8 bits")
    npix = width * height
    if pos >= len(data) or data[pos] not in _WS:
        if npix and magic == b"P5":
            raise TruncatedPayload("no raster after header")
    if magic == b"P5":
        raster = data[pos + 1:pos + 1 + npix]
        if len(raster) < npix:
            raise TruncatedPayload(f"expected {npix} pixels, found {len(raster)}")
        px = np.frombuffer(raster, dtype=np.uint8)
    else:
        fields = data[pos:].split()
        if len(fields) < npix:
            raise TruncatedPayload(f"expected {npix} pixels, found {len(fields)}")
        try:
            px = np.array([int(f) for f in fields[:npix]], dtype=np.int64)
        except ValueError as exc:
            raise MalformedHeader(f"non-numeric ASCII raster: {exc}") from None
    if px.max(initial=0) > maxval:
        raise MalformedHeader(f"pixel exceeds declared maxval {maxval}")
    return ImageBuffer(px.reshape(height, width).astype(np.uint8))


def write_pgm(img: ImageBuffer) -> bytes:
    header = f"P5\n{img.width} {img.height}\n{MAXVAL}\n".encode("ascii")
    return header + img.pixels.tobytes()


def load_pgm(path) -> ImageBuffer:
    with open(path, "rb") as fh:
        return read_pgm(fh.read())


def save_pgm(img: ImageBuffer, path) -> None:
    with open(path, "wb") as fh:
        fh.write(write_pgm(img))


# -- tensors -------------------------------------------------------------------

def normalize(img: ImageBuffer) -> np.ndarray:
    """1 x H x W float32 tensor with values pixel/127.5 - 1."""
    v = img.pixels.astype(np.float64) / 127.5 - 1.0
    return v.astype(np.float32)[None]


def denormalize(t: np.ndarray) -> ImageBuffer:
    """Inverse of :func:`normalize`: round((clamp(v,-1,1)+1)*127.5), half up."""
    t = np.asarray(t)
    if t.ndim != 3 or t.shape[0] != 1:
        raise ShapeMismatch(f"expected a 1 x H x W tensor, got {t.shape}")
    v = np.clip(t[0].astype(np.float64), -1.0, 1.0)
    return ImageBuffer(np.floor((v + 1.0) * 127.5 + 0.5).astype(np.uint8))


# -- metrics -------------------------------------------------------------------

def _same_shape(a: ImageBuffer, b: ImageBuffer) -> None:
    if a.shape != b.shape:
        raise ShapeMismatch(f"image shapes differ: {a.shape} vs {b.shape}")


def mse(a: ImageBuffer, b: ImageBuffer) -> float:
    _same_shape(a, b)
    d = a.pixels.astype(np.int64) - b.pixels.astype(np.int64)
    return float(np.mean(d * d))


def psnr(a: ImageBuffer, b: ImageBuffer) -> float:
    """PSNR in dB; ``math.inf`` for identical images."""
    m = mse(a, b)
    if m == 0:
        return math.inf
    return 10.0 * math.log10(MAXVAL * MAXVAL / m)


def ssim(a: ImageBuffer, b: ImageBuffer) -> float:
    """Mean SSIM over non-overlapping 8x8 windows (trailing partial windows dropped)."""
    _same_shape(a, b)
    h, w = a.shape
    if h < 8 or w < 8:
        raise TooSmall("SSIM needs at least 8x8 pixels")
    hh, ww = h - h % 8, w - w % 8

    def blocks(img):
        x = img.pixels[:hh, :ww].astype(np.float64)
        return x.reshape(hh // 8, 8, ww // 8, 8).transpose(0, 2, 1, 3).reshape(-1, 64)

    x, y = blocks(a), blocks(b)
    mx, my = x.mean(axis=1), y.mean(axis=1)
    vx = ((x - mx[:, None]) ** 2).mean(axis=1)
    vy = ((y - my[:, None]) ** 2).mean(axis=1)
    cxy = ((x - mx[:, None]) * (y - my[:, None])).mean(axis=1)
    num = (2 * mx * my + SSIM_C1) * (2 * cxy + SSIM_C2)
    den = (mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2)
    return float(np.mean(num / den))


# -- fingerprint ---------------------------------------------------------------

@dataclass(frozen=True)
class Fingerprint:
    """64-bit average hash; bit 0 (top-left cell) is the most significant bit."""

    value: int

    @property
    def bits(self) -> np.ndarray:
        return np.array([(self.value >> (63 - i)) & 1 for i in range(64)], dtype=np.uint8)

    @classmethod
    def from_bits(cls, bits) -> "Fingerprint":
        bits = list(bits)
        if len(bits) != 64:
            raise ValueError("fingerprint needs exactly 64 bits")
        v = 0
        for bit in bits:
            v = (v << 1) | (1 if bit else 0)
        return cls(v)

    def hex(self) -> str:
        return f"{self.value:016x}"

    @classmethod
    def from_hex(cls, text: str) -> "Fingerprint":
        if len(text) != 16:
            raise ValueError(f"fingerprint hex must be 16 chars, got {text!r}")
        return cls(int(text, 16))


def _edges(n: int) -> list[int]:
    return [(i * n) // 8 for i in range(9)]


def fingerprint(img: ImageBuffer) -> Fingerprint:
    """aHash: 8x8 block means, bit set iff the cell is strictly above their mean."""
    h, w = img.shape
    if h < 8 or w < 8:
        raise TooSmall("fingerprint needs at least 8x8 pixels")
    px = img.pixels.astype(np.float64)
    re, ce = _edges(h), _edges(w)
    cells = np.array([[px[re[i]:re[i + 1], ce[j]:ce[j + 1]].mean() for j in range(8)]
                      for i in range(8)])
    m = cells.mean()
    return Fingerprint.from_bits((cells > m).ravel())


def hamming(a: Fingerprint, b: Fingerprint) -> int:
    return bin(a.value ^ b.value).count("1")
