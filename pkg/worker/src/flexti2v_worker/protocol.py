"""FTIV wire protocol, server side.

Framing: magic "FTIV" | version u16 LE | msg_type u8 | payload_len u64 LE |
payload.  Message types: 1 Hello, 2 EstimateRequest, 3 EstimateResponse,
4 Error, 5 Shutdown.  Tensors are f32 little-endian, row-major, prefixed by
ndim u8 and ndim x u32 LE dims.
"""

from __future__ import annotations

import struct
from typing import BinaryIO

import numpy as np

MAGIC = b"FTIV"
VERSION = 1

MSG_HELLO = 1
MSG_ESTIMATE_REQUEST = 2
MSG_ESTIMATE_RESPONSE = 3
MSG_ERROR = 4
MSG_SHUTDOWN = 5

_HEADER = struct.Struct("<4sHBQ")
_MAX_PAYLOAD = 1 << 32


class FramingError(Exception):
    """Malformed frame or payload; the serve loop reports it and exits."""


class Disconnect(Exception):
    """Peer closed the stream."""


def read_exact(stream: BinaryIO, n: int) -> bytes:
    chunks = []
    remaining = n
    while remaining > 0:
        chunk = stream.read(remaining)
        if not chunk:
            raise Disconnect(f"stream closed with {remaining} bytes outstanding")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def read_message(stream: BinaryIO) -> tuple[int, bytes]:
    header = read_exact(stream, _HEADER.size)
    magic, version, msg_type, payload_len = _HEADER.unpack(header)
    if magic != MAGIC:
        raise FramingError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FramingError(f"unsupported protocol version {version}")
    if payload_len > _MAX_PAYLOAD:
        raise FramingError(f"payload length {payload_len} exceeds cap")
    try:
        payload = read_exact(stream, payload_len)
    except Disconnect as exc:
        raise FramingError(f"truncated payload: {exc}") from exc
    return msg_type, payload


def write_message(stream: BinaryIO, msg_type: int, payload: bytes = b"") -> None:
    stream.write(_HEADER.pack(MAGIC, VERSION, msg_type, len(payload)))
    stream.write(payload)
    stream.flush()


def pack_string(text: str) -> bytes:
    raw = text.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def unpack_string(payload: bytes, offset: int = 0) -> tuple[str, int]:
    if len(payload) < offset + 4:
        raise FramingError("string length field truncated")
    (n,) = struct.unpack_from("<I", payload, offset)
    end = offset + 4 + n
    if len(payload) < end:
        raise FramingError(f"string payload truncated: need {n} bytes")
    return payload[offset + 4 : end].decode("utf-8"), end


def unpack_estimate_request(payload: bytes) -> tuple[int, bool, str, np.ndarray]:
    """Parse t_train, conditional, prompt, and the (M,C,H,W) tensor."""
    if len(payload) < 5:
        raise FramingError("estimate request header truncated")
    t_train, conditional = struct.unpack_from("<IB", payload, 0)
    if conditional not in (0, 1):
        raise FramingError(f"conditional flag must be 0 or 1, got {conditional}")
    prompt, offset = unpack_string(payload, 5)
    if len(payload) < offset + 1:
        raise FramingError("tensor header truncated")
    ndim = payload[offset]
    if ndim != 4:
        raise FramingError("ndim must be 4")
    offset += 1
    if len(payload) < offset + 16:
        raise FramingError("tensor dims truncated")
    dims = struct.unpack_from("<4I", payload, offset)
    offset += 16
    count = dims[0] * dims[1] * dims[2] * dims[3]
    if len(payload) - offset != 4 * count:
        raise FramingError(
            f"tensor payload size mismatch: expected {4 * count} bytes,"
            f" got {len(payload) - offset}"
        )
    tensor = np.frombuffer(payload, dtype="<f4", count=count, offset=offset)
    return t_train, bool(conditional), prompt, tensor.reshape(dims).copy()


def pack_estimate_response(tensor: np.ndarray) -> bytes:
    dims = tensor.shape
    head = struct.pack("<B", len(dims)) + struct.pack(f"<{len(dims)}I", *dims)
    return head + np.ascontiguousarray(tensor, dtype="<f4").tobytes()
