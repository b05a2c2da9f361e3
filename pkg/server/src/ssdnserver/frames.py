"""SSDN frame encoding and decoding, written against the wire document only.

Frame layout, all integers u32 little-endian:

    magic "SSDN" | version=1 | msg_type | t | C | H | W | C*H*W f32 LE

msg_type 0 is the handshake (dims all zero, no payload), 1 a request,
2 a response. msg_type 255 is an error frame whose tail is instead a
u32 byte length plus a UTF-8 message.

This module shares no code with the client implementation; byte-for-byte
agreement between the two is enforced by the golden fixture files.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"SSDN"
VERSION = 1

HANDSHAKE = 0
REQUEST = 1
RESPONSE = 2
ERROR = 255

# Payload element count must fit a signed 32-bit int; error text is capped
# so a decoder never allocates unbounded memory from one length field.
MAX_ELEMENTS = 2**31 - 1
MAX_ERROR_BYTES = 1 << 16


class FrameError(Exception):
    """Bytes that do not parse as a frame.

    fatal means the stream position after the failure is unknowable (the
    remaining bytes cannot be realigned on a frame boundary), so the
    connection must be dropped once the error has been reported.
    """

    def __init__(self, message: str, fatal: bool = True) -> None:
        super().__init__(message)
        self.fatal = fatal


@dataclass(frozen=True)
class Frame:
    kind: int
    t: int = 0
    tensor: np.ndarray | None = None
    message: str = ""


def _tensor_frame(kind: int, t: int, tensor: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(tensor, dtype="<f4")
    if arr.ndim != 3:
        raise ValueError(f"tensor frames carry (C, H, W) data, got ndim {arr.ndim}")
    if arr.size > MAX_ELEMENTS:
        raise ValueError("dims overflow")
    head = MAGIC + struct.pack("<IIIIII", VERSION, kind, t, *arr.shape)
    return head + arr.tobytes()


def pack_handshake() -> bytes:
    return MAGIC + struct.pack("<IIIIII", VERSION, HANDSHAKE, 0, 0, 0, 0)


def pack_request(t: int, tensor: np.ndarray) -> bytes:
    return _tensor_frame(REQUEST, t, tensor)


def pack_response(t: int, tensor: np.ndarray) -> bytes:
    return _tensor_frame(RESPONSE, t, tensor)


def pack_error(message: str) -> bytes:
    data = message.encode("utf-8")[:MAX_ERROR_BYTES]
    return MAGIC + struct.pack("<III", VERSION, ERROR, len(data)) + data


def read_frame(recv) -> Frame | None:
    """Parse one frame from recv(n), a callable returning at most n bytes.

    Blocking reads are accumulated until the frame is complete. A clean
    end of stream before the first header byte returns None; running dry
    anywhere else is a truncated frame and therefore fatal.
    """

    def take(n: int, at_start: bool = False) -> bytes | None:
        chunks = []
        got = 0
        while got < n:
            piece = recv(n - got)
            if not piece:
                if at_start and got == 0:
                    return None
                raise FrameError("short frame")
            chunks.append(piece)
            got += len(piece)
        return b"".join(chunks)

    head = take(12, at_start=True)
    if head is None:
        return None
    if head[:4] != MAGIC:
        raise FrameError("bad magic")
    version, kind = struct.unpack_from("<II", head, 4)
    if version != VERSION:
        raise FrameError(f"unsupported protocol version {version}")

    if kind == ERROR:
        (length,) = struct.unpack("<I", take(4))
        if length > MAX_ERROR_BYTES:
            raise FrameError("oversized error message")
        text = take(length).decode("utf-8", errors="replace") if length else ""
        return Frame(ERROR, message=text)

    if kind not in (HANDSHAKE, REQUEST, RESPONSE):
        raise FrameError(f"unknown msg_type {kind}")

    t, c, h, w = struct.unpack("<IIII", take(16))
    count = c * h * w
    if count > MAX_ELEMENTS:
        raise FrameError("dims overflow")
    if kind == HANDSHAKE:
        if count != 0:
            raise FrameError("handshake frame must carry empty dims")
        return Frame(HANDSHAKE, t=t)
    raw = take(4 * count)
    tensor = np.frombuffer(raw, dtype="<f4").reshape(c, h, w).copy()
    return Frame(kind, t=t, tensor=tensor)
