"""Lossless entropy stage: zlib-wrapped deflate streams (RFC 1950/1951)."""

from __future__ import annotations

import zlib


class EntropyError(ValueError):
    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"{message} at byte offset {offset}")


def entropy_encode(data: bytes, level: int = 9) -> bytes:
    return zlib.compress(bytes(data), level)


def entropy_decode(stream: bytes) -> bytes:
    d = zlib.decompressobj()
    try:
        out = d.decompress(stream) + d.flush()
    except zlib.error as exc:
        raise EntropyError(f"corrupt deflate stream ({exc})", _error_offset(stream)) from None
    if not d.eof:
        raise EntropyError("truncated deflate stream", len(stream))
    if d.unused_data:
        raise EntropyError("trailing bytes after deflate stream", len(stream) - len(d.unused_data))
    return out


def _error_offset(stream: bytes) -> int:
    # feed one byte at a time to find where the decoder first rejects input
    d = zlib.decompressobj()
    for k in range(len(stream)):
        try:
            d.decompress(stream[k : k + 1])
        except zlib.error:
            return k
    return len(stream)
