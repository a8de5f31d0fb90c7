"""Binary checkpoint files.

Layout (all integers little-endian)::

    magic    4 bytes  b"XRCW"
    version  u8       1
    payload:
      patch_size u16, beta u16, front_width u16, rnn_widths 3 x u16,
      decoder_width u16, steps u8, quantizer_bits u8, flags u8 (bit 0 = peephole)
      value count u32
      parameters as float32, concatenated in declaration order
    crc32    u32      of the payload bytes
"""

from __future__ import annotations

import hashlib
import os
import struct
import tempfile
import zlib

import numpy as np

from .codec import CodecConfig, CodecModel, build_model

MAGIC = b"XRCW"
VERSION = 1
_CONFIG = struct.Struct("<7HBBB")
_COUNT = struct.Struct("<I")


class CheckpointError(ValueError):
    pass


def _payload(model: CodecModel) -> bytes:
    c = model.config
    head = _CONFIG.pack(
        c.patch_size, c.beta, c.front_width, *c.rnn_widths, c.decoder_width, c.steps, c.quantizer_bits, int(c.peephole)
    )
    arrays = [t.data.astype("<f4").ravel() for t in model.parameters()]
    body = np.concatenate(arrays).tobytes()
    return head + _COUNT.pack(len(body) // 4) + body


def checkpoint_bytes(model: CodecModel) -> bytes:
    payload = _payload(model)
    return MAGIC + bytes([VERSION]) + payload + struct.pack("<I", zlib.crc32(payload))


def model_digest(model: CodecModel) -> bytes:
    """32-byte SHA-256 of the checkpoint payload; identifies the exact network."""
    return hashlib.sha256(_payload(model)).digest()


def save_checkpoint(model: CodecModel, path) -> None:
    data = checkpoint_bytes(model)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".ckpt-")
    with os.fdopen(fd, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def parse_checkpoint(data: bytes, dtype=np.float32) -> CodecModel:
    if len(data) < 5 + _CONFIG.size + _COUNT.size + 4:
        raise CheckpointError("checkpoint truncated")
    if data[:4] != MAGIC:
        raise CheckpointError(f"bad checkpoint magic {data[:4]!r}")
    if data[4] != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {data[4]}")
    payload, (crc,) = data[5:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(payload) != crc:
        raise CheckpointError("checkpoint checksum mismatch")
    n, beta, fw, r1, r2, r3, dw, steps, bits, flags = _CONFIG.unpack_from(payload)
    config = CodecConfig(n, beta, fw, (r1, r2, r3), dw, steps, bits, bool(flags & 1))
    (count,) = _COUNT.unpack_from(payload, _CONFIG.size)
    body = payload[_CONFIG.size + _COUNT.size :]
    if len(body) != 4 * count:
        raise CheckpointError(f"checkpoint body has {len(body)} bytes, header says {4 * count}")
    model = build_model(config, seed=0, dtype=dtype)
    if model.num_parameters() != count:
        raise CheckpointError(f"checkpoint holds {count} values, config needs {model.num_parameters()}")
    values = np.frombuffer(body, dtype="<f4")
    offset = 0
    for t in model.parameters():
        n_el = t.data.size
        t.data = values[offset : offset + n_el].reshape(t.shape).astype(dtype)
        offset += n_el
    return model


def load_checkpoint(path, dtype=np.float32) -> CodecModel:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise CheckpointError(f"{path}: cannot read checkpoint ({exc.strerror})") from exc
    return parse_checkpoint(data, dtype)
