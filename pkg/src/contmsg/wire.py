"""Byte layout of the TCP data frame.

Header (little-endian): magic "CONT" (4 bytes), version (1 byte, =1),
kind (1 byte, 1=DATA), source (4-byte unsigned), tag (8-byte unsigned),
length (4-byte unsigned), then `length` payload bytes.
"""

from __future__ import annotations

import struct

from .errors import WireFormatError

MAGIC = b"CONT"
VERSION = 1
KIND_DATA = 1

_HEADER = struct.Struct("<4sBBIQI")
HEADER_SIZE = _HEADER.size  # 22 bytes


def encode_frame(source: int, tag: int, payload: bytes) -> bytes:
    return _HEADER.pack(MAGIC, VERSION, KIND_DATA, source, tag, len(payload)) + payload


class FrameDecoder:
    """Incremental decoder: feed bytes, yield (source, tag, payload) frames."""

    def __init__(self):
        self._buf = bytearray()

    def feed(self, data: bytes):
        self._buf.extend(data)
        frames = []
        while True:
            if len(self._buf) < HEADER_SIZE:
                break
            magic, version, kind, source, tag, length = _HEADER.unpack_from(self._buf)
            if magic != MAGIC:
                raise WireFormatError(f"bad magic {bytes(magic)!r}")
            if version != VERSION:
                raise WireFormatError(f"unsupported version {version}")
            if kind != KIND_DATA:
                raise WireFormatError(f"unknown frame kind {kind}")
            if len(self._buf) < HEADER_SIZE + length:
                break
            payload = bytes(self._buf[HEADER_SIZE:HEADER_SIZE + length])
            del self._buf[:HEADER_SIZE + length]
            frames.append((source, tag, payload))
        return frames
