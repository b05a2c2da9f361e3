"""SSDN denoiser wire protocol: framing and the client side.

Frame layout (all integers u32 little-endian):

    magic "SSDN" | version=1 | msg_type | t | C | H | W | C*H*W f32 LE values

msg_type 0 is the handshake (all dims zero, no payload), 1 a request,
2 a response. msg_type 255 is an error frame with a different tail:
u32 byte length followed by a UTF-8 message.

The same framing runs over TCP or over the stdin/stdout of a spawned
server process. One request is in flight per connection at a time.
"""

from __future__ import annotations

import select
import shlex
import socket
import struct
import subprocess
from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.typing import NDArray

from .errors import ConnectionFailed, ProtocolViolation, RemoteTimeout

MAGIC = b"SSDN"
VERSION = 1
MSG_HANDSHAKE = 0
MSG_REQUEST = 1
MSG_RESPONSE = 2
MSG_ERROR = 255

MAX_ELEMENTS = 2**31 - 1
MAX_ERROR_BYTES = 1 << 16

ReadFn = Callable[[int], bytes]


@dataclass(frozen=True)
class Frame:
    msg_type: int
    t: int = 0
    tensor: NDArray[np.float32] | None = None
    message: str | None = None


def _pack_tensor_frame(msg_type: int, t: int, tensor: NDArray[np.float32] | None) -> bytes:
    if tensor is None:
        dims = (0, 0, 0)
        payload = b""
    else:
        arr = np.ascontiguousarray(tensor, dtype="<f4")
        if arr.ndim != 3:
            raise ProtocolViolation(f"tensor frames carry (C, H, W) data, got ndim {arr.ndim}")
        if arr.size > MAX_ELEMENTS:
            raise ProtocolViolation("dims overflow")
        dims = arr.shape
        payload = arr.tobytes()
    head = MAGIC + struct.pack("<IIIIII", VERSION, msg_type, t, *dims)
    return head + payload


def pack_handshake() -> bytes:
    return _pack_tensor_frame(MSG_HANDSHAKE, 0, None)


def pack_request(t: int, tensor: NDArray[np.float32]) -> bytes:
    return _pack_tensor_frame(MSG_REQUEST, t, tensor)


def pack_response(t: int, tensor: NDArray[np.float32]) -> bytes:
    return _pack_tensor_frame(MSG_RESPONSE, t, tensor)


def pack_error(message: str) -> bytes:
    data = message.encode("utf-8")[:MAX_ERROR_BYTES]
    return MAGIC + struct.pack("<III", VERSION, MSG_ERROR, len(data)) + data


def read_frame(read_exact: ReadFn) -> Frame:
    """Parse one frame from a blocking read callable.

    read_exact(n) should return n bytes or raise; any short return is
    reported as a short payload, so a plain BytesIO.read works too.
    """

    def take(n: int) -> bytes:
        data = read_exact(n)
        if len(data) != n:
            raise ProtocolViolation("short payload")
        return data

    head = take(12)
    if head[:4] != MAGIC:
        raise ProtocolViolation("bad magic")
    version, msg_type = struct.unpack_from("<II", head, 4)
    if version != VERSION:
        raise ProtocolViolation(f"unsupported protocol version {version}")
    if msg_type == MSG_ERROR:
        (length,) = struct.unpack("<I", take(4))
        if length > MAX_ERROR_BYTES:
            raise ProtocolViolation("oversized error message")
        text = take(length).decode("utf-8", errors="replace")
        return Frame(MSG_ERROR, message=text)
    if msg_type not in (MSG_HANDSHAKE, MSG_REQUEST, MSG_RESPONSE):
        raise ProtocolViolation(f"unknown msg_type {msg_type}")
    t, c, h, w = struct.unpack("<IIII", take(16))
    count = c * h * w
    if count > MAX_ELEMENTS:
        raise ProtocolViolation("dims overflow")
    if msg_type == MSG_HANDSHAKE:
        if count != 0:
            raise ProtocolViolation("handshake frame must carry empty dims")
        return Frame(MSG_HANDSHAKE, t=t)
    raw = take(4 * count)
    tensor = np.frombuffer(raw, dtype="<f4").reshape(c, h, w).copy()
    return Frame(msg_type, t=t, tensor=tensor)


# ---------------------------------------------------------------------------
# Transports

class _TcpTransport:
    def __init__(self, host: str, port: int, timeout: float) -> None:
        try:
            self._sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as exc:
            raise ConnectionFailed(f"cannot connect to {host}:{port}: {exc}")
        self._sock.settimeout(timeout)

    def read_exact(self, n: int) -> bytes:
        chunks = []
        got = 0
        while got < n:
            try:
                chunk = self._sock.recv(n - got)
            except socket.timeout:
                raise RemoteTimeout("timed out waiting for server data")
            except OSError as exc:
                raise ConnectionFailed(f"connection lost: {exc}")
            if not chunk:
                raise ProtocolViolation("short payload")
            chunks.append(chunk)
            got += len(chunk)
        return b"".join(chunks)

    def write(self, data: bytes) -> None:
        try:
            self._sock.sendall(data)
        except socket.timeout:
            raise RemoteTimeout("timed out sending to server")
        except OSError as exc:
            raise ConnectionFailed(f"connection lost: {exc}")

    def close(self) -> None:
        try:
            self._sock.close()
        except OSError:
            pass


class _StdioTransport:
    """Frames over the stdin/stdout of a child server process."""

    def __init__(self, argv: list[str], timeout: float) -> None:
        self._timeout = timeout
        try:
            self._proc = subprocess.Popen(
                argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE
            )
        except OSError as exc:
            raise ConnectionFailed(f"cannot spawn {argv[0]}: {exc}")

    def read_exact(self, n: int) -> bytes:
        out = self._proc.stdout
        chunks = []
        got = 0
        while got < n:
            ready, _, _ = select.select([out], [], [], self._timeout)
            if not ready:
                raise RemoteTimeout("timed out waiting for server process")
            chunk = out.read1(n - got)
            if not chunk:
                raise ProtocolViolation("short payload")
            chunks.append(chunk)
            got += len(chunk)
        return b"".join(chunks)

    def write(self, data: bytes) -> None:
        try:
            self._proc.stdin.write(data)
            self._proc.stdin.flush()
        except (OSError, ValueError) as exc:
            raise ConnectionFailed(f"server process pipe closed: {exc}")

    def close(self) -> None:
        for stream in (self._proc.stdin, self._proc.stdout):
            try:
                stream.close()
            except OSError:
                pass
        self._proc.terminate()
        try:
            self._proc.wait(timeout=5.0)
        except subprocess.TimeoutExpired:
            self._proc.kill()
            self._proc.wait()


class DenoiserClient:
    """Blocking request/response client over one SSDN connection.

    Endpoint specs: "tcp:HOST:PORT" or "stdio:CMD ARG ...". The handshake
    runs at connect time; request() then frames one tensor at a time.
    """

    def __init__(self, transport) -> None:
        self._transport = transport
        self._handshake()

    @classmethod
    def connect(cls, endpoint: str, timeout: float = 30.0) -> "DenoiserClient":
        kind, _, rest = endpoint.partition(":")
        if kind == "tcp":
            host, _, port_s = rest.rpartition(":")
            if not host or not port_s.isdigit():
                raise ConnectionFailed(f"bad tcp endpoint {endpoint!r} (need tcp:HOST:PORT)")
            return cls(_TcpTransport(host, int(port_s), timeout))
        if kind == "stdio":
            argv = shlex.split(rest)
            if not argv:
                raise ConnectionFailed("stdio endpoint needs a command")
            return cls(_StdioTransport(argv, timeout))
        raise ConnectionFailed(f"unknown endpoint kind {kind!r} (need tcp: or stdio:)")

    def _handshake(self) -> None:
        self._transport.write(pack_handshake())
        frame = read_frame(self._transport.read_exact)
        if frame.msg_type == MSG_ERROR:
            raise ConnectionFailed(f"server rejected handshake: {frame.message}")
        if frame.msg_type != MSG_HANDSHAKE:
            raise ProtocolViolation(f"expected handshake reply, got msg_type {frame.msg_type}")

    def request(self, t: int, tensor: NDArray[np.float32]) -> NDArray[np.float32]:
        self._transport.write(pack_request(t, tensor))
        frame = read_frame(self._transport.read_exact)
        if frame.msg_type == MSG_ERROR:
            raise ProtocolViolation(f"server error: {frame.message}")
        if frame.msg_type != MSG_RESPONSE:
            raise ProtocolViolation(f"expected response, got msg_type {frame.msg_type}")
        if frame.tensor.shape != tuple(tensor.shape):
            raise ProtocolViolation(
                f"response shape {frame.tensor.shape} differs from request {tuple(tensor.shape)}"
            )
        if frame.t != t:
            raise ProtocolViolation(f"response t={frame.t} does not echo request t={t}")
        return frame.tensor

    def close(self) -> None:
        self._transport.close()

    def __enter__(self) -> "DenoiserClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
