"""Single-threaded request loop.

Replies Hello to Hello, answers EstimateRequests from the selected model,
exits 0 on Shutdown.  Any framing violation or malformed request gets an
Error reply (best effort) followed by exit code 1.  Responses depend only
on the request; there is no cross-request state.
"""

from __future__ import annotations

import socket
from typing import BinaryIO, Callable

from . import protocol
from .dummy import dummy_denoise

Model = Callable  # (z, t_train, prompt, conditional) -> tensor

MODELS: dict[str, Model] = {
    "dummy": dummy_denoise,
}


def serve(reader: BinaryIO, writer: BinaryIO, model: Model, name: str) -> int:
    """Run the request loop until Shutdown; returns the process exit code."""
    try:
        while True:
            msg_type, payload = protocol.read_message(reader)
            if msg_type == protocol.MSG_HELLO:
                protocol.write_message(
                    writer, protocol.MSG_HELLO, protocol.pack_string(name)
                )
            elif msg_type == protocol.MSG_ESTIMATE_REQUEST:
                t_train, conditional, prompt, tensor = protocol.unpack_estimate_request(
                    payload
                )
                result = model(tensor, t_train, prompt, conditional)
                if result.shape != tensor.shape:
                    raise protocol.FramingError(
                        f"model changed dims {tensor.shape} -> {result.shape}"
                    )
                protocol.write_message(
                    writer,
                    protocol.MSG_ESTIMATE_RESPONSE,
                    protocol.pack_estimate_response(result),
                )
            elif msg_type == protocol.MSG_SHUTDOWN:
                return 0
            else:
                raise protocol.FramingError(f"unexpected message type {msg_type}")
    except protocol.Disconnect:
        return 1
    except protocol.FramingError as exc:
        try:
            protocol.write_message(
                writer, protocol.MSG_ERROR, protocol.pack_string(str(exc))
            )
        except OSError:
            pass
        return 1


def serve_tcp(host: str, port: int, model: Model, name: str, announce=None) -> int:
    """Accept one connection, serve it, exit."""
    with socket.create_server((host, port)) as server:
        bound = server.getsockname()
        if announce is not None:
            announce(f"listening on {bound[0]}:{bound[1]}")
        conn, _ = server.accept()
        with conn:
            reader = conn.makefile("rb")
            writer = conn.makefile("wb")
            return serve(reader, writer, model, name)
