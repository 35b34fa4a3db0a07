"""Out-of-process noise-estimation worker for the FTIV wire protocol."""

from .dummy import dummy_denoise
from .server import MODELS, serve, serve_tcp

__version__ = "0.1.0"
