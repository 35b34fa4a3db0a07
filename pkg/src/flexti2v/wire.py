"""Binary wire protocol for out-of-process noise estimation.

Every message:  magic "FTIV" | version u16 LE | msg_type u8 | payload_len
u64 LE | payload.  Payloads:

  Hello            name_len u32 LE | name UTF-8
  EstimateRequest  t_train u32 LE | conditional u8 | prompt_len u32 LE |
                   prompt UTF-8 | ndim u8 (= 4) | dims 4 x u32 LE (M,C,H,W) |
                   tensor f32 LE row-major
  EstimateResponse ndim u8 | dims ndim x u32 LE | tensor f32 LE
  Error            msg_len u32 LE | message UTF-8
  Shutdown         (empty)
"""

from __future__ import annotations

import struct
from typing import BinaryIO

import numpy as np

from .errors import ProtocolError, TransportError, VersionMismatchError

MAGIC = b"FTIV"
VERSION = 1

MSG_HELLO = 1
MSG_ESTIMATE_REQUEST = 2
MSG_ESTIMATE_RESPONSE = 3
MSG_ERROR = 4
MSG_SHUTDOWN = 5

_HEADER = struct.Struct("<4sHBQ")
_MAX_PAYLOAD = 1 << 32  # sanity cap against corrupt length fields


def _read_exact(stream: BinaryIO, n: int) -> bytes:
    chunks = []
    remaining = n
    while remaining > 0:
        chunk = stream.read(remaining)
        if not chunk:
            raise TransportError(f"stream closed with {remaining} bytes outstanding")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def write_message(stream: BinaryIO, msg_type: int, payload: bytes = b"") -> None:
    try:
        stream.write(_HEADER.pack(MAGIC, VERSION, msg_type, len(payload)))
        stream.write(payload)
        stream.flush()
    except (BrokenPipeError, OSError) as exc:
        raise TransportError(f"write failed: {exc}") from exc


def read_message(stream: BinaryIO) -> tuple[int, bytes]:
    header = _read_exact(stream, _HEADER.size)
    magic, version, msg_type, payload_len = _HEADER.unpack(header)
    if magic != MAGIC:
        raise ProtocolError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise VersionMismatchError(f"protocol version {version}, expected {VERSION}")
    if payload_len > _MAX_PAYLOAD:
        raise ProtocolError(f"payload length {payload_len} exceeds cap")
    return msg_type, _read_exact(stream, payload_len)


def pack_string(text: str) -> bytes:
    raw = text.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def unpack_string(payload: bytes, offset: int = 0) -> tuple[str, int]:
    if len(payload) < offset + 4:
        raise ProtocolError("string length field truncated")
    (n,) = struct.unpack_from("<I", payload, offset)
    end = offset + 4 + n
    if len(payload) < end:
        raise ProtocolError(f"string payload truncated: need {n} bytes")
    return payload[offset + 4 : end].decode("utf-8"), end


def pack_tensor(tensor: np.ndarray) -> bytes:
    dims = tensor.shape
    head = struct.pack("<B", len(dims)) + struct.pack(f"<{len(dims)}I", *dims)
    return head + np.ascontiguousarray(tensor, dtype="<f4").tobytes()


def unpack_tensor(payload: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    if len(payload) < offset + 1:
        raise ProtocolError("tensor header truncated")
    ndim = payload[offset]
    offset += 1
    if len(payload) < offset + 4 * ndim:
        raise ProtocolError("tensor dims truncated")
    dims = struct.unpack_from(f"<{ndim}I", payload, offset)
    offset += 4 * ndim
    count = 1
    for d in dims:
        count *= d
    end = offset + 4 * count
    if len(payload) < end:
        raise ProtocolError(
            f"tensor payload truncated: expected {4 * count} bytes, got {len(payload) - offset}"
        )
    data = np.frombuffer(payload, dtype="<f4", count=count, offset=offset)
    return data.reshape(dims).copy(), end


def pack_hello(name: str) -> bytes:
    return pack_string(name)


def unpack_hello(payload: bytes) -> str:
    name, _ = unpack_string(payload)
    return name


def pack_error(message: str) -> bytes:
    return pack_string(message)


def unpack_error(payload: bytes) -> str:
    message, _ = unpack_string(payload)
    return message


def pack_estimate_request(
    t_train: int, conditional: bool, prompt: str, tensor: np.ndarray
) -> bytes:
    head = struct.pack("<IB", t_train, 1 if conditional else 0)
    return head + pack_string(prompt) + pack_tensor(tensor)


def unpack_estimate_request(payload: bytes) -> tuple[int, bool, str, np.ndarray]:
    if len(payload) < 5:
        raise ProtocolError("estimate request header truncated")
    t_train, conditional = struct.unpack_from("<IB", payload, 0)
    if conditional not in (0, 1):
        raise ProtocolError(f"conditional flag must be 0 or 1, got {conditional}")
    prompt, offset = unpack_string(payload, 5)
    tensor, end = unpack_tensor(payload, offset)
    if end != len(payload):
        raise ProtocolError(f"{len(payload) - end} trailing bytes after tensor")
    return t_train, bool(conditional), prompt, tensor


def pack_estimate_response(tensor: np.ndarray) -> bytes:
    return pack_tensor(tensor)


def unpack_estimate_response(payload: bytes) -> np.ndarray:
    tensor, end = unpack_tensor(payload)
    if end != len(payload):
        raise ProtocolError(f"{len(payload) - end} trailing bytes after tensor")
    return tensor
