"""Error hierarchy shared by the whole package.

Each branch corresponds to one process exit-code category (see cli):
config 1, file/IO 2, protocol 3, numeric 4.
"""


class DiffRestoreError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(DiffRestoreError):
    """Invalid configuration; message names the offending field."""


class FileFormatError(DiffRestoreError):
    """Unreadable or malformed input/output file."""


class ProtocolError(DiffRestoreError):
    """Denoiser wire-protocol failure."""


class ConnectionFailed(ProtocolError):
    """Endpoint unreachable or connection dropped before handshake."""


class ProtocolViolation(ProtocolError):
    """Malformed frame: bad magic, bad version, short payload, bad dims."""


class RemoteTimeout(ProtocolError):
    """The remote denoiser did not answer within the configured timeout."""


class NumericError(DiffRestoreError):
    """Non-finite values detected during computation."""
