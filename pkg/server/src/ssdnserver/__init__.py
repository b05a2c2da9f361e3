"""Reference server for the SSDN denoiser wire protocol."""

from .backends import (
    BackendError,
    EchoBackend,
    GaussianBackend,
    HookBackend,
    alpha_bars,
    load_ssdt,
)
from .frames import (
    ERROR,
    Frame,
    FrameError,
    HANDSHAKE,
    MAX_ELEMENTS,
    MAX_ERROR_BYTES,
    REQUEST,
    RESPONSE,
    pack_error,
    pack_handshake,
    pack_request,
    pack_response,
    read_frame,
)
from .server import make_tcp_server, serve_connection, serve_stdio

__version__ = "0.1.0"
