"""Latent tensor containers, the encode/decode codec boundary, and the
bit-exact PPM / LTN file formats.

Layout conventions are normative: float32, row-major (channel outermost,
then row, then column), little-endian on disk.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DimensionError, FormatError

_LTN_MAGIC = b"LTN1"
_LTN_VERSION = 1
_LTN_HEADER = struct.Struct("<4sHIIII")
_U32_MAX = 0xFFFFFFFF


def _as_f32(data: np.ndarray, ndim: int, what: str) -> np.ndarray:
    arr = np.asarray(data)
    if arr.ndim != ndim:
        raise DimensionError(f"{what} must be {ndim}-dimensional, got shape {arr.shape}")
    if arr.dtype != np.float32:
        arr = arr.astype(np.float32)
    if not np.isfinite(arr).all():
        raise DimensionError(f"{what} contains non-finite values")
    return np.ascontiguousarray(arr)


@dataclass(frozen=True)
class LatentFrame:
    """One C,H,W latent tensor (float32, all entries finite)."""

    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "data", _as_f32(self.data, 3, "latent frame"))

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape


@dataclass(frozen=True)
class LatentVideo:
    """M stacked latent frames sharing one (C, H, W)."""

    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "data", _as_f32(self.data, 4, "latent video"))

    @staticmethod
    def from_frames(frames: Sequence[LatentFrame]) -> "LatentVideo":
        if not frames:
            raise DimensionError("a latent video needs at least one frame")
        dims = frames[0].dims
        for f in frames:
            if f.dims != dims:
                raise DimensionError(f"frame dims differ: {f.dims} vs {dims}")
        return LatentVideo(np.stack([f.data for f in frames]))

    @property
    def num_frames(self) -> int:
        return self.data.shape[0]

    @property
    def frame_dims(self) -> tuple[int, int, int]:
        return self.data.shape[1:]

    def frame(self, m: int) -> LatentFrame:
        return LatentFrame(self.data[m].copy())


@dataclass(frozen=True)
class ConditionSet:
    """Encoded condition images with strictly increasing target positions."""

    latents: tuple[LatentFrame, ...]
    positions: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "latents", tuple(self.latents))
        object.__setattr__(self, "positions", tuple(int(p) for p in self.positions))
        if len(self.latents) == 0:
            raise DimensionError("condition set must hold at least one image")
        if len(self.latents) != len(self.positions):
            raise DimensionError("one position per condition image required")
        dims = self.latents[0].dims
        for lat in self.latents:
            if lat.dims != dims:
                raise DimensionError(f"condition dims differ: {lat.dims} vs {dims}")
        if self.positions[0] < 0:
            raise DimensionError("positions must be non-negative")
        for a, b in zip(self.positions, self.positions[1:]):
            if b <= a:
                raise DimensionError("positions strictly increasing")

    def __len__(self) -> int:
        return len(self.latents)

    @property
    def frame_dims(self) -> tuple[int, int, int]:
        return self.latents[0].dims


def _is_pow2(x: float) -> bool:
    if not (math.isfinite(x) and x > 0):
        return False
    mant, _ = math.frexp(x)
    return mant == 0.5


@dataclass(frozen=True)
class Codec:
    """Lossless pixel<->latent rearrangement plus per-channel scaling.

    `identity` keeps 3xHxW; `patchify` is space-to-depth by `patch`, giving
    (3*patch^2)x(H/patch)x(W/patch).  Scales must be powers of two and
    offsets zero so decode(encode(x)) == x holds bit for bit; anything else
    is rejected at construction.
    """

    kind: str = "identity"
    patch: int = 1
    scale: tuple[float, ...] | float = 1.0
    offset: tuple[float, ...] | float = 0.0

    def __post_init__(self):
        if self.kind not in ("identity", "patchify"):
            raise DimensionError(f"unknown codec kind {self.kind!r}")
        if self.kind == "patchify" and self.patch < 1:
            raise DimensionError("patch factor must be >= 1")
        for s in np.atleast_1d(np.asarray(self.scale, dtype=np.float64)):
            if not _is_pow2(float(s)):
                raise DimensionError("codec scale must be a positive power of two")
        for o in np.atleast_1d(np.asarray(self.offset, dtype=np.float64)):
            if o != 0.0:
                raise DimensionError("codec offset must be zero for exact inversion")

    @property
    def channels(self) -> int:
        return 3 if self.kind == "identity" else 3 * self.patch * self.patch

    def _scale_vec(self, c: int) -> np.ndarray:
        vec = np.asarray(self.scale, dtype=np.float32).reshape(-1)
        if vec.size == 1:
            vec = np.full(c, vec[0], dtype=np.float32)
        if vec.shape != (c,):
            raise DimensionError(f"codec scale length {vec.size} does not match {c} channels")
        return vec.reshape(c, 1, 1)


def encode(image: np.ndarray, codec: Codec) -> LatentFrame:
    """Map a 3xHxW raster in [-1, 1] into latent space."""
    img = _as_f32(image, 3, "image raster")
    if img.shape[0] != 3:
        raise DimensionError(f"raster must have 3 channels, got {img.shape[0]}")
    if codec.kind == "patchify":
        f = codec.patch
        _, h, w = img.shape
        if h % f or w % f:
            raise DimensionError(f"raster {h}x{w} not divisible by patch factor {f}")
        lat = (
            img.reshape(3, h // f, f, w // f, f)
            .transpose(0, 2, 4, 1, 3)
            .reshape(3 * f * f, h // f, w // f)
        )
    else:
        lat = img
    lat = lat * codec._scale_vec(lat.shape[0])
    return LatentFrame(lat)


def decode(latent: LatentFrame, codec: Codec) -> np.ndarray:
    """Exact inverse of encode; output is unclamped 3xHxW float32."""
    c, h, w = latent.dims
    if c != codec.channels:
        raise DimensionError(f"latent has {c} channels; codec expects {codec.channels}")
    lat = latent.data * (np.float32(1.0) / codec._scale_vec(c))
    if codec.kind == "patchify":
        f = codec.patch
        return np.ascontiguousarray(
            lat.reshape(3, f, f, h, w).transpose(0, 3, 1, 4, 2).reshape(3, h * f, w * f)
        )
    return lat


# ---------------------------------------------------------------------------
# PPM (binary P6, maxval 255, single whitespace after each header token)
# ---------------------------------------------------------------------------


def _ppm_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    start = pos
    while pos < len(buf) and not buf[pos : pos + 1].isspace():
        pos += 1
    if pos == start:
        raise FormatError(f"empty header token at byte {start}")
    if pos >= len(buf):
        raise FormatError(f"header truncated at byte {pos}")
    return buf[start:pos], pos + 1  # consume the single whitespace


def read_ppm(path) -> np.ndarray:
    """Read a P6 PPM into a 3xHxW float32 raster scaled to [-1, 1]."""
    buf = Path(path).read_bytes()
    magic, pos = _ppm_token(buf, 0)
    if magic != b"P6":
        raise FormatError(f"bad magic {magic!r} at byte 0, expected b'P6'")
    fields = []
    for name in ("width", "height", "maxval"):
        tok, pos = _ppm_token(buf, pos)
        if not tok.isdigit():
            raise FormatError(f"non-numeric {name} {tok!r} at byte {pos - len(tok) - 1}")
        fields.append(int(tok))
    w, h, maxval = fields
    if maxval != 255:
        raise FormatError(f"maxval must be 255, got {maxval}")
    if w < 1 or h < 1:
        raise FormatError(f"degenerate image size {w}x{h}")
    expected = 3 * w * h
    payload = buf[pos:]
    if len(payload) != expected:
        raise FormatError(
            f"payload at byte {pos}: expected {expected} bytes, got {len(payload)}"
        )
    pix = np.frombuffer(payload, dtype=np.uint8).reshape(h, w, 3)
    return np.ascontiguousarray(
        pix.transpose(2, 0, 1).astype(np.float32) / np.float32(127.5) - np.float32(1.0)
    )


def write_ppm(image: np.ndarray, path) -> None:
    """Quantize a 3xHxW raster to bytes (round half away from zero, clamp)."""
    img = _as_f32(image, 3, "image raster")
    if img.shape[0] != 3:
        raise DimensionError(f"raster must have 3 channels, got {img.shape[0]}")
    _, h, w = img.shape
    x = (img.astype(np.float64) + 1.0) * 127.5
    q = np.sign(x) * np.floor(np.abs(x) + 0.5)
    pix = np.clip(q, 0, 255).astype(np.uint8).transpose(1, 2, 0)
    header = b"P6\n%d %d\n255\n" % (w, h)
    Path(path).write_bytes(header + pix.tobytes())


# ---------------------------------------------------------------------------
# LTN (latent tensor file): magic | version u16 | M,C,H,W u32 | f32 payload
# ---------------------------------------------------------------------------


def write_ltn(video: LatentVideo, path) -> None:
    m, c, h, w = video.data.shape
    for name, v in (("M", m), ("C", c), ("H", h), ("W", w)):
        if v > _U32_MAX:
            raise FormatError(f"dim {name}={v} overflows u32")
    header = _LTN_HEADER.pack(_LTN_MAGIC, _LTN_VERSION, m, c, h, w)
    payload = np.ascontiguousarray(video.data, dtype="<f4").tobytes()
    Path(path).write_bytes(header + payload)


def read_ltn(path) -> LatentVideo:
    buf = Path(path).read_bytes()
    if len(buf) < _LTN_HEADER.size:
        raise FormatError(f"header truncated: {len(buf)} bytes, need {_LTN_HEADER.size}")
    magic, version, m, c, h, w = _LTN_HEADER.unpack_from(buf, 0)
    if magic != _LTN_MAGIC:
        raise FormatError(f"bad magic {magic!r} at byte 0, expected {_LTN_MAGIC!r}")
    if version != _LTN_VERSION:
        raise FormatError(f"unsupported version {version} at byte 4")
    count = m * c * h * w
    if min(m, c, h, w) < 1:
        raise FormatError(f"degenerate dims ({m},{c},{h},{w}) at byte 6")
    if count * 4 > 1 << 40:
        raise FormatError(f"dims ({m},{c},{h},{w}) overflow the payload budget")
    expected = _LTN_HEADER.size + 4 * count
    if len(buf) != expected:
        raise FormatError(
            f"payload at byte {_LTN_HEADER.size}: expected {expected - _LTN_HEADER.size}"
            f" bytes, got {len(buf) - _LTN_HEADER.size}"
        )
    data = np.frombuffer(buf, dtype="<f4", offset=_LTN_HEADER.size).reshape(m, c, h, w)
    return LatentVideo(data.copy())
