"""Client side of the remote noise-estimation protocol.

A RemoteEstimator owns one worker transport (a child process on stdio
pipes, or a TCP connection), performs the Hello handshake eagerly, and
sends Shutdown when closed.  Transport is bit-exact: tensors travel as
f32 little-endian in both directions.
"""

from __future__ import annotations

import shlex
import socket
import subprocess

from . import wire
from .errors import ProtocolError, TransportError, WorkerError
from .tensors import LatentVideo

CLIENT_NAME = "flexti2v-engine"


class RemoteEstimator:
    """Noise estimator backed by a wire-protocol worker."""

    uses_guidance = True

    def __init__(self, reader, writer, owner=None):
        self._reader = reader
        self._writer = writer
        self._owner = owner  # Popen or socket kept alive for cleanup
        self._closed = False
        wire.write_message(self._writer, wire.MSG_HELLO, wire.pack_hello(CLIENT_NAME))
        msg_type, payload = wire.read_message(self._reader)
        if msg_type == wire.MSG_ERROR:
            raise WorkerError(wire.unpack_error(payload))
        if msg_type != wire.MSG_HELLO:
            raise ProtocolError(f"expected Hello reply, got message type {msg_type}")
        self.worker_name = wire.unpack_hello(payload)

    @classmethod
    def launch(cls, command: str | list[str]) -> "RemoteEstimator":
        """Spawn a worker child process and talk to it over stdio pipes."""
        argv = shlex.split(command) if isinstance(command, str) else list(command)
        try:
            proc = subprocess.Popen(
                argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE
            )
        except OSError as exc:
            raise TransportError(f"failed to launch worker {argv[0]!r}: {exc}") from exc
        try:
            return cls(proc.stdout, proc.stdin, owner=proc)
        except Exception:
            proc.kill()
            proc.wait()
            raise

    @classmethod
    def connect(cls, host: str, port: int) -> "RemoteEstimator":
        try:
            sock = socket.create_connection((host, port), timeout=30.0)
        except OSError as exc:
            raise TransportError(f"failed to connect to {host}:{port}: {exc}") from exc
        reader = sock.makefile("rb")
        writer = sock.makefile("wb")
        try:
            return cls(reader, writer, owner=sock)
        except Exception:
            sock.close()
            raise

    def estimate(self, z: LatentVideo, t_train: int, prompt, conditional: bool) -> LatentVideo:
        if self._closed:
            raise TransportError("estimator already closed")
        text = prompt.text if conditional else (prompt.negative or "")
        payload = wire.pack_estimate_request(t_train, conditional, text, z.data)
        wire.write_message(self._writer, wire.MSG_ESTIMATE_REQUEST, payload)
        msg_type, reply = wire.read_message(self._reader)
        if msg_type == wire.MSG_ERROR:
            raise WorkerError(wire.unpack_error(reply))
        if msg_type != wire.MSG_ESTIMATE_RESPONSE:
            raise ProtocolError(f"expected EstimateResponse, got message type {msg_type}")
        tensor = wire.unpack_estimate_response(reply)
        if tensor.shape != z.data.shape:
            raise ProtocolError(
                f"response shape {tensor.shape} differs from request shape {z.data.shape}"
            )
        return LatentVideo(tensor)

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        try:
            wire.write_message(self._writer, wire.MSG_SHUTDOWN)
        except TransportError:
            pass
        for stream in (self._writer, self._reader):
            try:
                stream.close()
            except OSError:
                pass
        if isinstance(self._owner, subprocess.Popen):
            try:
                self._owner.wait(timeout=10.0)
            except subprocess.TimeoutExpired:
                self._owner.kill()
                self._owner.wait()
        elif isinstance(self._owner, socket.socket):
            self._owner.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
