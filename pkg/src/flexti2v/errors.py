"""Exception taxonomy shared across the engine.

The CLI maps these onto exit codes: config/validation problems exit 2,
engine and estimator failures exit 3, transport/protocol failures exit 4.
"""


class ConfigError(ValueError):
    """Invalid configuration value or constraint violation."""


class DimensionError(ValueError):
    """Tensors with incompatible shapes, dtypes, or non-finite values."""


class FormatError(ValueError):
    """Malformed file content (PPM / LTN); message carries a byte offset."""


class EngineError(RuntimeError):
    """A denoising run failed; message carries the step context."""


class TransportError(RuntimeError):
    """Byte-stream transport to a remote worker failed."""


class ProtocolError(TransportError):
    """Framing violation: bad magic, bad length, or payload-size mismatch."""


class VersionMismatchError(ProtocolError):
    """Peer speaks a different protocol version."""


class WorkerError(RuntimeError):
    """The remote worker replied with an Error message."""
