"""Versioned binary container used by model files and checkpoints.

Layout, all little-endian:

    magic (4 bytes) | version u32 | payload | crc32(payload) u32

Truncation surfaces either as a mid-record parse failure in the payload
reader or as a checksum mismatch. Writers go through a temp file plus atomic
rename so a failed run never leaves a partial artifact behind.
"""

from __future__ import annotations

import os
import struct
import tempfile
import zlib
from pathlib import Path

from .errors import ChecksumError, ModelIOError, VersionError

_VERSION_STRUCT = struct.Struct("<I")
_TRAILER = struct.Struct("<I")  # crc32 of payload
_MAGIC_LEN = 4
_MIN_SIZE = _MAGIC_LEN + _VERSION_STRUCT.size + _TRAILER.size


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    """Write `data` to `path` via a same-directory temp file and rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or Path("."), prefix=path.name + ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def atomic_write_text(path: str | Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def write_envelope(path: str | Path, magic: bytes, version: int, payload: bytes) -> None:
    if len(magic) != _MAGIC_LEN:
        raise ValueError(f"magic must be {_MAGIC_LEN} bytes, got {magic!r}")
    blob = (
        magic
        + _VERSION_STRUCT.pack(version)
        + payload
        + _TRAILER.pack(zlib.crc32(payload) & 0xFFFFFFFF)
    )
    atomic_write_bytes(path, blob)


def peek_magic(path: str | Path) -> bytes:
    """Return the 4-byte magic of a container file without validating it."""
    with open(path, "rb") as fh:
        magic = fh.read(_MAGIC_LEN)
    if len(magic) != _MAGIC_LEN:
        raise ModelIOError(f"{path}: too short to be a model file")
    return magic


def read_envelope(path: str | Path, magic: bytes, supported_versions: tuple[int, ...]) -> tuple[int, bytes]:
    """Validate a container file and return (version, payload)."""
    data = Path(path).read_bytes()
    if len(data) < _MIN_SIZE:
        raise ModelIOError(f"{path}: truncated file ({len(data)} bytes)")
    if data[:_MAGIC_LEN] != magic:
        raise ModelIOError(
            f"{path}: bad magic {data[:_MAGIC_LEN]!r}, expected {magic!r}"
        )
    (version,) = _VERSION_STRUCT.unpack_from(data, _MAGIC_LEN)
    if version not in supported_versions:
        raise VersionError(
            f"{path}: unsupported format version {version}; "
            f"supported versions: {', '.join(str(v) for v in supported_versions)}"
        )
    payload = data[_MAGIC_LEN + _VERSION_STRUCT.size : -_TRAILER.size]
    (stored_crc,) = _TRAILER.unpack_from(data, len(data) - _TRAILER.size)
    actual_crc = zlib.crc32(payload) & 0xFFFFFFFF
    if stored_crc != actual_crc:
        raise ChecksumError(
            f"{path}: checksum mismatch (stored {stored_crc:#010x}, computed {actual_crc:#010x})"
        )
    return version, payload
