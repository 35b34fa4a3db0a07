"""Client-side wire protocol tests against in-test servers.

The fake servers below hand-assemble frames with struct, independent of
the package's packing helpers, so both directions of the format get
checked against the byte layout and not against itself.
"""

import socket
import struct
import threading

import numpy as np
import pytest

from flexti2v import wire
from flexti2v.engine import PromptSpec
from flexti2v.errors import (
    ProtocolError,
    TransportError,
    VersionMismatchError,
    WorkerError,
)
from flexti2v.remote import RemoteEstimator
from flexti2v.tensors import LatentVideo

PROMPT = PromptSpec("move the camera", "blurry")


def frame_bytes(msg_type, payload=b"", magic=b"FTIV", version=1):
    return struct.pack("<4sHBQ", magic, version, msg_type, len(payload)) + payload


def hello_payload(name):
    raw = name.encode()
    return struct.pack("<I", len(raw)) + raw


def run_fake_server(behavior):
    """Start a one-connection TCP server; `behavior(reader, writer)` drives it."""
    server = socket.create_server(("127.0.0.1", 0))
    port = server.getsockname()[1]

    def serve():
        conn, _ = server.accept()
        with conn:
            reader = conn.makefile("rb")
            writer = conn.makefile("wb")
            try:
                behavior(reader, writer)
                writer.flush()
            except (OSError, ValueError):
                pass
        server.close()

    thread = threading.Thread(target=serve, daemon=True)
    thread.start()
    return port


def read_frame(reader):
    head = reader.read(15)
    magic, version, msg_type, n = struct.unpack("<4sHBQ", head)
    return msg_type, reader.read(n)


def echo_double_server(reader, writer):
    """Handshake, then answer each request with 2*z until Shutdown."""
    msg_type, _ = read_frame(reader)
    assert msg_type == wire.MSG_HELLO
    writer.write(frame_bytes(wire.MSG_HELLO, hello_payload("fake")))
    writer.flush()
    while True:
        msg_type, payload = read_frame(reader)
        if msg_type == wire.MSG_SHUTDOWN:
            return
        t_train, conditional = struct.unpack_from("<IB", payload, 0)
        (plen,) = struct.unpack_from("<I", payload, 5)
        off = 9 + plen
        ndim = payload[off]
        dims = struct.unpack_from(f"<{ndim}I", payload, off + 1)
        tensor = np.frombuffer(payload, dtype="<f4", offset=off + 1 + 4 * ndim)
        reply = (
            struct.pack("<B", ndim)
            + struct.pack(f"<{ndim}I", *dims)
            + (tensor * np.float32(2.0)).tobytes()
        )
        writer.write(frame_bytes(wire.MSG_ESTIMATE_RESPONSE, reply))
        writer.flush()


def test_estimate_roundtrip_and_shutdown():
    port = run_fake_server(echo_double_server)
    est = RemoteEstimator.connect("127.0.0.1", port)
    assert est.worker_name == "fake"
    z = LatentVideo(np.arange(16, dtype=np.float32).reshape(2, 2, 2, 2))
    out = est.estimate(z, 700, PROMPT, conditional=True)
    assert np.array_equal(out.data, z.data * 2.0)
    est.close()


def test_request_payload_sizes():
    z = np.zeros((16, 4, 8, 8), dtype=np.float32)
    payload = wire.pack_estimate_request(500, True, "", z)
    # t_train + flag + prompt_len + ndim + dims + tensor
    assert len(payload) == 4 + 1 + 4 + 0 + 1 + 16 + 16384
    response = wire.pack_estimate_response(z)
    assert len(response) == 1 + 16 + 16384
    tensor = wire.unpack_estimate_response(response)
    assert tensor.nbytes == 16384


def test_request_carries_negative_prompt_when_unconditional():
    captured = {}

    def capture_server(reader, writer):
        read_frame(reader)
        writer.write(frame_bytes(wire.MSG_HELLO, hello_payload("fake")))
        writer.flush()
        msg_type, payload = read_frame(reader)
        (plen,) = struct.unpack_from("<I", payload, 5)
        captured["conditional"] = payload[4]
        captured["prompt"] = payload[9 : 9 + plen].decode()
        dims = struct.unpack_from("<4I", payload, 9 + plen + 1)
        reply = struct.pack("<B4I", 4, *dims) + payload[9 + plen + 17 :]
        writer.write(frame_bytes(wire.MSG_ESTIMATE_RESPONSE, reply))
        writer.flush()

    port = run_fake_server(capture_server)
    est = RemoteEstimator.connect("127.0.0.1", port)
    z = LatentVideo(np.zeros((1, 1, 2, 2), dtype=np.float32))
    est.estimate(z, 10, PROMPT, conditional=False)
    assert captured == {"conditional": 0, "prompt": "blurry"}


def test_worker_error_reply_raises():
    def error_server(reader, writer):
        read_frame(reader)
        writer.write(frame_bytes(wire.MSG_HELLO, hello_payload("fake")))
        writer.flush()
        read_frame(reader)
        writer.write(frame_bytes(wire.MSG_ERROR, hello_payload("oom")))
        writer.flush()

    port = run_fake_server(error_server)
    est = RemoteEstimator.connect("127.0.0.1", port)
    z = LatentVideo(np.zeros((1, 1, 2, 2), dtype=np.float32))
    with pytest.raises(WorkerError, match="oom"):
        est.estimate(z, 10, PROMPT, conditional=True)


def test_worker_error_mid_run_aborts_with_step_context():
    def error_after_handshake(reader, writer):
        read_frame(reader)
        writer.write(frame_bytes(wire.MSG_HELLO, hello_payload("fake")))
        writer.flush()
        read_frame(reader)
        writer.write(frame_bytes(wire.MSG_ERROR, hello_payload("oom")))
        writer.flush()

    import numpy as np

    from flexti2v.engine import EngineConfig, run_flexti2v
    from flexti2v.errors import EngineError
    from flexti2v.schedule import make_schedule, select_timesteps
    from flexti2v.tensors import ConditionSet, LatentFrame

    port = run_fake_server(error_after_handshake)
    est = RemoteEstimator.connect("127.0.0.1", port)
    rng = np.random.default_rng(0)
    conds = ConditionSet(
        (LatentFrame(rng.standard_normal((2, 4, 4)).astype(np.float32)),), (0,)
    )
    with pytest.raises(EngineError, match=r"step k=20 .*oom") as excinfo:
        run_flexti2v(
            EngineConfig(seed=1),
            conds,
            PROMPT,
            est,
            make_schedule(),
            select_timesteps(1000, 20),
        )
    assert isinstance(excinfo.value.__cause__, WorkerError)


def test_bad_magic_raises_protocol_error():
    def bad_magic_server(reader, writer):
        read_frame(reader)
        writer.write(frame_bytes(wire.MSG_HELLO, hello_payload("x"), magic=b"JUNK"))
        writer.flush()

    port = run_fake_server(bad_magic_server)
    with pytest.raises(ProtocolError, match="magic"):
        RemoteEstimator.connect("127.0.0.1", port)


def test_version_mismatch_raises():
    def v2_server(reader, writer):
        read_frame(reader)
        writer.write(frame_bytes(wire.MSG_HELLO, hello_payload("x"), version=2))
        writer.flush()

    port = run_fake_server(v2_server)
    with pytest.raises(VersionMismatchError):
        RemoteEstimator.connect("127.0.0.1", port)


def test_truncated_stream_raises_transport_error():
    def truncating_server(reader, writer):
        read_frame(reader)
        writer.write(frame_bytes(wire.MSG_HELLO, hello_payload("fake")))
        writer.flush()
        read_frame(reader)
        writer.write(b"FTIV\x01")  # header cut short, then hang up

    port = run_fake_server(truncating_server)
    est = RemoteEstimator.connect("127.0.0.1", port)
    z = LatentVideo(np.zeros((1, 1, 2, 2), dtype=np.float32))
    with pytest.raises(TransportError):
        est.estimate(z, 10, PROMPT, conditional=True)


def test_shape_mismatch_raises_protocol_error():
    def wrong_shape_server(reader, writer):
        read_frame(reader)
        writer.write(frame_bytes(wire.MSG_HELLO, hello_payload("fake")))
        writer.flush()
        read_frame(reader)
        tensor = np.zeros((1, 1, 1, 1), dtype="<f4")
        reply = struct.pack("<B4I", 4, 1, 1, 1, 1) + tensor.tobytes()
        writer.write(frame_bytes(wire.MSG_ESTIMATE_RESPONSE, reply))
        writer.flush()

    port = run_fake_server(wrong_shape_server)
    est = RemoteEstimator.connect("127.0.0.1", port)
    z = LatentVideo(np.zeros((2, 1, 2, 2), dtype=np.float32))
    with pytest.raises(ProtocolError, match="shape"):
        est.estimate(z, 10, PROMPT, conditional=True)


def test_tensor_payload_size_mismatch():
    payload = struct.pack("<B4I", 4, 2, 2, 2, 2) + b"\x00" * 10  # needs 64
    with pytest.raises(ProtocolError, match="truncated"):
        wire.unpack_estimate_response(payload)


def test_dead_endpoint_raises_transport_error():
    # grab a port and close it so nothing listens there
    probe = socket.create_server(("127.0.0.1", 0))
    port = probe.getsockname()[1]
    probe.close()
    with pytest.raises(TransportError):
        RemoteEstimator.connect("127.0.0.1", port)


def test_launch_failure_raises_transport_error():
    with pytest.raises(TransportError):
        RemoteEstimator.launch("/nonexistent/worker-binary")
