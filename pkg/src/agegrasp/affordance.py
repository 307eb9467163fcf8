"""Affordance maps, depth images, the Gaussian-bump annotator and raster I/O.

Raster layout (AFM1 and DPT1 share it)::

    magic    4 bytes   b"AFM1" or b"DPT1"
    width    uint32    little-endian
    height   uint32    little-endian
    values   float32   little-endian, width*height of them, row-major

Depth is also accepted as a binary 16-bit PGM (``P5``, maxval 65535) holding
millimetres.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from typing import BinaryIO, Sequence, Union

import numpy as np

from .errors import ParseError, ValidationError

AFM_MAGIC = b"AFM1"
DPT_MAGIC = b"DPT1"
_HEADER = struct.Struct("<4sII")

DEFAULT_SIGMA_PX = 10.0

Source = Union[str, os.PathLike, bytes, BinaryIO]


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, dtype=np.float64, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class AffordanceMap:
    """Per-pixel affordance probabilities, shape ``(height, width)``."""

    values: np.ndarray

    def __post_init__(self):
        values = _frozen(self.values)
        if values.ndim != 2 or values.shape[0] == 0 or values.shape[1] == 0:
            raise ValidationError(f"affordance map must be a non-empty 2D grid, got shape {values.shape}")
        if not np.all(np.isfinite(values)) or values.min() < 0.0 or values.max() > 1.0:
            raise ValidationError("affordance values must lie in [0, 1]")
        object.__setattr__(self, "values", values)

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    def __eq__(self, other):
        if not isinstance(other, AffordanceMap):
            return NotImplemented
        return self.values.shape == other.values.shape and bool(np.array_equal(self.values, other.values))

    def argmax_pixel(self) -> tuple[int, int]:
        """(col, row) of the maximum; the first in row-major order on ties."""
        flat = int(np.argmax(self.values))
        row, col = divmod(flat, self.width)
        return col, row


@dataclass(frozen=True)
class InteractionPoint:
    x: float  # column
    y: float  # row


@dataclass(frozen=True, eq=False)
class DepthImage:
    """Depth in metres, shape ``(height, width)``; 0 marks a missing reading."""

    depth: np.ndarray

    def __post_init__(self):
        depth = _frozen(self.depth)
        if depth.ndim != 2 or depth.shape[0] == 0 or depth.shape[1] == 0:
            raise ValidationError(f"depth image must be a non-empty 2D grid, got shape {depth.shape}")
        if not np.all(np.isfinite(depth)) or depth.min() < 0.0:
            raise ValidationError("depth values must be finite and non-negative")
        object.__setattr__(self, "depth", depth)

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def valid(self) -> np.ndarray:
        return self.depth > 0.0

    def __eq__(self, other):
        if not isinstance(other, DepthImage):
            return NotImplemented
        return self.depth.shape == other.depth.shape and bool(np.array_equal(self.depth, other.depth))


def gaussian_bump(
    points: Sequence[InteractionPoint | tuple[float, float]],
    sigma: float = DEFAULT_SIGMA_PX,
    width: int = 640,
    height: int = 480,
) -> AffordanceMap:
    """Rasterise interaction points into a probability mask.

    Each point contributes ``exp(-d^2 / (2 sigma^2))`` where ``d`` is the pixel
    distance to it; overlapping bumps combine by pointwise maximum so every
    annotated pixel keeps probability 1.
    """
    if not sigma > 0:
        raise ValidationError(f"sigma must be positive, got {sigma}")
    if width <= 0 or height <= 0:
        raise ValidationError("width and height must be positive")
    pts = [p if isinstance(p, InteractionPoint) else InteractionPoint(*p) for p in points]
    if not pts:
        raise ValidationError("at least one interaction point is required")
    for p in pts:
        if not (0 <= p.x < width and 0 <= p.y < height):
            raise ValidationError(f"interaction point ({p.x}, {p.y}) lies outside a {width}x{height} image")

    cols = np.arange(width, dtype=np.float64)
    rows = np.arange(height, dtype=np.float64)
    out = np.zeros((height, width))
    two_s2 = 2.0 * sigma * sigma
    for p in pts:
        d2 = (rows[:, None] - p.y) ** 2 + (cols[None, :] - p.x) ** 2
        np.maximum(out, np.exp(-d2 / two_s2), out=out)
    return AffordanceMap(out)


# ---------------------------------------------------------------------------
# raster I/O

def _read_bytes(source: Source) -> bytes:
    if isinstance(source, (bytes, bytearray)):
        return bytes(source)
    if isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as fh:
            return fh.read()
    return source.read()


def _write_bytes(destination, payload: bytes) -> None:
    if isinstance(destination, (str, os.PathLike)):
        with open(destination, "wb") as fh:
            fh.write(payload)
    else:
        destination.write(payload)


def _encode_raster(magic: bytes, grid: np.ndarray) -> bytes:
    height, width = grid.shape
    body = np.ascontiguousarray(grid, dtype="<f4").tobytes()
    return _HEADER.pack(magic, width, height) + body


def _decode_raster(data: bytes, magic: bytes) -> np.ndarray:
    if len(data) < 4 or data[:4] != magic:
        raise ParseError(f"bad magic: expected {magic!r}, got {data[:4]!r}")
    if len(data) < _HEADER.size:
        raise ParseError("truncated: header shorter than 12 bytes")
    _, width, height = _HEADER.unpack_from(data)
    if width == 0 or height == 0:
        raise ParseError(f"invalid dimensions {width}x{height}")
    expected = width * height * 4
    payload = data[_HEADER.size:]
    if len(payload) < expected:
        raise ParseError(
            f"truncated: {width}x{height} raster needs {width * height} values, got {len(payload) // 4}"
        )
    if len(payload) > expected:
        raise ParseError(f"trailing data: {len(payload) - expected} bytes after the raster")
    return np.frombuffer(payload, dtype="<f4").reshape(height, width).astype(np.float64)


def afm_bytes(aff: AffordanceMap) -> bytes:
    return _encode_raster(AFM_MAGIC, aff.values)


def write_afm(aff: AffordanceMap, destination) -> None:
    _write_bytes(destination, afm_bytes(aff))


def read_afm(source: Source) -> AffordanceMap:
    grid = _decode_raster(_read_bytes(source), AFM_MAGIC)
    if not np.all(np.isfinite(grid)) or grid.min() < 0.0 or grid.max() > 1.0:
        raise ParseError("out of range: affordance values must lie in [0, 1]")
    return AffordanceMap(grid)


def write_depth(depth: DepthImage, destination) -> None:
    """Write depth as a DPT1 raster (metres, float32)."""
    _write_bytes(destination, _encode_raster(DPT_MAGIC, depth.depth))


def write_depth_pgm(depth: DepthImage, destination) -> None:
    """Write depth as a 16-bit binary PGM in millimetres (rounded)."""
    mm = np.rint(depth.depth * 1000.0)
    if mm.max() > 65535:
        raise ValidationError("depth exceeds the 65.535 m range of a 16-bit PGM")
    header = f"P5\n{depth.width} {depth.height}\n65535\n".encode("ascii")
    _write_bytes(destination, header + mm.astype(">u2").tobytes())


def _pgm_tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    tokens: list[bytes] = []
    pos = 0
    n = len(data)
    while len(tokens) < count:
        while pos < n and data[pos:pos + 1].isspace():
            pos += 1
        if pos < n and data[pos:pos + 1] == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise ParseError("truncated: incomplete PGM header")
        tokens.append(data[start:pos])
    # exactly one whitespace byte separates the header from the raster
    if pos >= n or not data[pos:pos + 1].isspace():
        raise ParseError("truncated: PGM header not terminated")
    return tokens, pos + 1


def _decode_pgm(data: bytes) -> np.ndarray:
    tokens, offset = _pgm_tokens(data, 4)
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise ParseError(f"malformed PGM header: {exc}") from None
    if maxval != 65535:
        raise ParseError(f"unsupported PGM maxval {maxval}: depth PGM must use 65535 (16-bit millimetres)")
    if width <= 0 or height <= 0:
        raise ParseError(f"invalid dimensions {width}x{height}")
    payload = data[offset:]
    expected = width * height * 2
    if len(payload) < expected:
        raise ParseError(f"truncated: PGM raster needs {expected} bytes, got {len(payload)}")
    if len(payload) > expected:
        raise ParseError(f"trailing data: {len(payload) - expected} bytes after the PGM raster")
    mm = np.frombuffer(payload, dtype=">u2").reshape(height, width)
    return mm.astype(np.float64) / 1000.0


def read_depth(source: Source) -> DepthImage:
    """Read a DPT1 raster or a 16-bit PGM into metres."""
    data = _read_bytes(source)
    if data[:4] == DPT_MAGIC:
        grid = _decode_raster(data, DPT_MAGIC)
    elif data[:2] == b"P5":
        grid = _decode_pgm(data)
    else:
        raise ParseError(f"unsupported depth format (magic {data[:4]!r})")
    if not np.all(np.isfinite(grid)):
        raise ParseError("non-finite depth value")
    if grid.min() < 0.0:
        raise ParseError("negative depth value")
    return DepthImage(grid)
