"""Connection handling: one strict request/response exchange at a time.

Every problem with a request is answered in-band with an error frame.
Whether the connection survives depends on whether the bad frame could be
fully consumed: well-formed frames of the wrong kind and backend failures
keep the stream aligned, so serving continues; undecodable bytes leave the
stream desynchronized and the connection is dropped after the report.
"""

from __future__ import annotations

import socketserver
import sys

from .backends import BackendError
from .frames import (
    FrameError,
    HANDSHAKE,
    REQUEST,
    pack_error,
    pack_handshake,
    pack_response,
    read_frame,
)


def serve_connection(recv, send, backend) -> None:
    """Answer frames from recv(n) via send(bytes) until the peer closes."""
    while True:
        try:
            frame = read_frame(recv)
        except FrameError as err:
            send(pack_error(str(err)))
            if err.fatal:
                return
            continue
        if frame is None:
            return
        if frame.kind == HANDSHAKE:
            send(pack_handshake())
            continue
        if frame.kind != REQUEST:
            send(pack_error(f"unexpected msg_type {frame.kind}"))
            continue
        try:
            out = backend.predict(frame.t, frame.tensor)
        except BackendError as err:
            send(pack_error(str(err)))
            continue
        except Exception as exc:  # noqa: BLE001  user hook code, keep serving
            send(pack_error(f"hook failed: {exc}"))
            continue
        send(pack_response(frame.t, out))


def make_tcp_server(host: str, port: int, backend) -> socketserver.ThreadingTCPServer:
    """Bound, threaded TCP server; the caller drives serve_forever()."""

    class Handler(socketserver.StreamRequestHandler):
        def handle(self) -> None:
            def send(data: bytes) -> None:
                self.wfile.write(data)
                self.wfile.flush()

            try:
                serve_connection(self.rfile.read, send, backend)
            except (BrokenPipeError, ConnectionResetError):
                pass  # peer vanished mid-reply; nothing to report to

    class Server(socketserver.ThreadingTCPServer):
        allow_reuse_address = True
        daemon_threads = True

    return Server((host, port), Handler)


def serve_stdio(backend, stdin=None, stdout=None) -> None:
    """Speak the protocol over this process's own stdin/stdout."""
    rd = stdin if stdin is not None else sys.stdin.buffer
    wr = stdout if stdout is not None else sys.stdout.buffer

    def send(data: bytes) -> None:
        wr.write(data)
        wr.flush()

    serve_connection(rd.read, send, backend)
