"""Compressed-image container, tiling, and file-level compress/decompress.

Container layout (all integers little-endian)::

    magic          4 bytes  b"XRC1"
    version        u8       1
    height         u32      original image height
    width          u32      original image width
    tile_size      u16      N
    beta           u16
    bits           u8       quantizer bits
    tile_count     u16
    model_digest   32 bytes SHA-256 of the checkpoint payload
    tile_count records, row-major over the tile grid:
        q_min      f64
        q_scale    f64
        length     u32
        payload    `length` bytes, a zlib/deflate stream of the latent codes

Images whose sides are not multiples of N are padded by edge replication
before tiling; the header keeps the original size, so the padding is implied
and is cropped away on decompression.
"""

from __future__ import annotations

import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import model_digest
from .codec import CodecModel, QuantizedLatent, decode, dequantize, encode, quantize
from .entropy import EntropyError, entropy_decode, entropy_encode
from .imageio import read_image, write_image
from .metrics import to_uint8

MAGIC = b"XRC1"
VERSION = 1
WORKERS_ENV = "XRC_WORKERS"

_HEADER = struct.Struct("<4sBIIHHBH32s")
_TILE = struct.Struct("<ddI")


class ContainerError(ValueError):
    pass


class TilingError(ValueError):
    pass


# --------------------------------------------------------------------------
# tiling


@dataclass
class TileGrid:
    tiles: np.ndarray  # (rows, cols, N, N)

    @property
    def rows(self) -> int:
        return self.tiles.shape[0]

    @property
    def cols(self) -> int:
        return self.tiles.shape[1]

    @property
    def size(self) -> int:
        return self.tiles.shape[2]

    def __len__(self) -> int:
        return self.rows * self.cols

    def placements(self) -> list[tuple[int, int]]:
        return [(r, c) for r in range(self.rows) for c in range(self.cols)]

    def flat(self) -> np.ndarray:
        return self.tiles.reshape(-1, self.size, self.size)


def tile_image(image: np.ndarray, size: int) -> TileGrid:
    """Split an image into a row-major grid of non-overlapping size x size tiles."""
    img = np.asarray(image)
    if img.ndim != 2:
        raise TilingError(f"expected a 2-D image, got shape {img.shape}")
    h, w = img.shape
    if h % size or w % size:
        raise TilingError(
            f"image {h}x{w} is not divisible into {size}x{size} tiles; "
            f"pad to {-(-h // size) * size}x{-(-w // size) * size} first (pad_to_multiple, edge replication)"
        )
    tiles = img.reshape(h // size, size, w // size, size).swapaxes(1, 2).copy()
    return TileGrid(tiles)


def untile(grid: TileGrid) -> np.ndarray:
    r, c, n, _ = grid.tiles.shape
    return grid.tiles.swapaxes(1, 2).reshape(r * n, c * n).copy()


def pad_to_multiple(image: np.ndarray, size: int) -> np.ndarray:
    h, w = image.shape
    ph, pw = -h % size, -w % size
    if not ph and not pw:
        return image
    return np.pad(image, ((0, ph), (0, pw)), mode="edge")


# --------------------------------------------------------------------------
# container


@dataclass
class TileRecord:
    q_min: float
    q_scale: float
    payload: bytes


@dataclass
class Container:
    height: int
    width: int
    tile_size: int
    beta: int
    bits: int
    model_digest: bytes
    tiles: list[TileRecord] = field(default_factory=list)
    version: int = VERSION

    @property
    def grid_shape(self) -> tuple[int, int]:
        n = self.tile_size
        return -(-self.height // n), -(-self.width // n)

    @property
    def nominal_ratio(self) -> float:
        return 256.0 / self.beta * (8.0 / self.bits)

    def to_bytes(self) -> bytes:
        if len(self.model_digest) != 32:
            raise ContainerError(f"model digest must be 32 bytes, got {len(self.model_digest)}")
        if len(self.tiles) > 0xFFFF:
            raise ContainerError(f"{len(self.tiles)} tiles exceed the 16-bit tile count field")
        parts = [
            _HEADER.pack(
                MAGIC,
                self.version,
                self.height,
                self.width,
                self.tile_size,
                self.beta,
                self.bits,
                len(self.tiles),
                self.model_digest,
            )
        ]
        for t in self.tiles:
            parts.append(_TILE.pack(t.q_min, t.q_scale, len(t.payload)))
            parts.append(t.payload)
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Container":
        if len(data) < 4 or data[:4] != MAGIC:
            raise ContainerError(f"not an XRC1 container (magic {bytes(data[:4])!r})")
        if len(data) < _HEADER.size:
            raise ContainerError(f"truncated header ({len(data)} of {_HEADER.size} bytes)")
        _, version, h, w, n, beta, bits, count, digest = _HEADER.unpack_from(data)
        if version != VERSION:
            raise ContainerError(f"unsupported container version {version}")
        if h < 1 or w < 1 or n < 1 or beta < 1 or not 1 <= bits <= 16:
            raise ContainerError(f"invalid header fields (h={h}, w={w}, N={n}, beta={beta}, bits={bits})")
        out = cls(h, w, n, beta, bits, digest, version=version)
        rows, cols = out.grid_shape
        if count != rows * cols:
            raise ContainerError(f"tile count {count} does not match a {rows}x{cols} grid")
        pos = _HEADER.size
        for k in range(count):
            if pos + _TILE.size > len(data):
                raise ContainerError(f"truncated record for tile {k} at byte {pos}")
            q_min, q_scale, length = _TILE.unpack_from(data, pos)
            pos += _TILE.size
            if pos + length > len(data):
                raise ContainerError(f"truncated payload for tile {k} at byte {pos}")
            out.tiles.append(TileRecord(q_min, q_scale, bytes(data[pos : pos + length])))
            pos += length
        if pos != len(data):
            raise ContainerError(f"{len(data) - pos} trailing bytes after the last tile")
        return out

    def describe(self) -> dict:
        rows, cols = self.grid_shape
        return {
            "version": self.version,
            "height": self.height,
            "width": self.width,
            "tile_size": self.tile_size,
            "grid": f"{rows}x{cols}",
            "tiles": len(self.tiles),
            "beta": self.beta,
            "bits": self.bits,
            "nominal_ratio": self.nominal_ratio,
            "effective_ratio": self.height * self.width / len(self.to_bytes()),
            "model_digest": self.model_digest.hex(),
        }


def read_container(path) -> Container:
    with open(path, "rb") as fh:
        return Container.from_bytes(fh.read())


# --------------------------------------------------------------------------
# file-level pipeline


def _workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def _map(fn, items):
    workers = _workers()
    if workers == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def compress_image(image: np.ndarray, model: CodecModel) -> Container:
    cfg = model.config
    img = np.asarray(image)
    if img.ndim != 2 or img.dtype != np.uint8:
        raise ContainerError(f"expected a 2-D uint8 image, got {img.dtype} {img.shape}")
    grid = tile_image(pad_to_multiple(img, cfg.patch_size), cfg.patch_size)

    def one(tile):
        z = encode(model, (tile.astype(np.float64) / 255.0)[None, None])
        q = quantize(z.data[0], cfg.quantizer_bits)
        return TileRecord(q.q_min, q.q_scale, entropy_encode(q.to_bytes()))

    records = _map(one, list(grid.flat()))
    return Container(img.shape[0], img.shape[1], cfg.patch_size, cfg.beta, cfg.quantizer_bits, model_digest(model), records)


def decompress_image(container: Container, model: CodecModel) -> np.ndarray:
    cfg = model.config
    if container.model_digest != model_digest(model):
        raise ContainerError("container was written by a different model (digest mismatch)")
    if (container.tile_size, container.beta, container.bits) != (cfg.patch_size, cfg.beta, cfg.quantizer_bits):
        raise ContainerError(
            f"container geometry N={container.tile_size} beta={container.beta} bits={container.bits} "
            f"does not match checkpoint N={cfg.patch_size} beta={cfg.beta} bits={cfg.quantizer_bits}"
        )
    n = cfg.patch_size

    def one(k_rec):
        k, rec = k_rec
        try:
            raw = entropy_decode(rec.payload)
        except EntropyError as exc:
            raise ContainerError(f"tile {k}: {exc}") from exc
        q = QuantizedLatent.from_bytes(raw, cfg.latent_shape, rec.q_min, rec.q_scale, cfg.quantizer_bits)
        y = decode(model, dequantize(q)[None])
        return to_uint8(y.data[0, 0])

    tiles = _map(one, list(enumerate(container.tiles)))
    rows, cols = container.grid_shape
    full = untile(TileGrid(np.stack(tiles).reshape(rows, cols, n, n)))
    return full[: container.height, : container.width]


@dataclass
class CompressResult:
    container: Container
    input_bytes: int
    output_bytes: int
    raw_latent_bytes: int

    @property
    def nominal_ratio(self) -> float:
        return self.container.nominal_ratio

    @property
    def effective_ratio(self) -> float:
        return self.input_bytes / self.output_bytes


def compress_file(input_path, model: CodecModel, output_path) -> CompressResult:
    """Tile, encode, quantize and deflate an 8-bit grayscale image into a container file.

    The effective ratio is raw pixel bytes (height x width) over container bytes.
    """
    image = read_image(input_path)
    container = compress_image(image, model)
    data = container.to_bytes()
    with open(output_path, "wb") as fh:
        fh.write(data)
    cfg = model.config
    p = cfg.latent_size
    raw = len(container.tiles) * p * p * cfg.beta * ((cfg.quantizer_bits + 7) // 8)
    return CompressResult(container, image.size, len(data), raw)


def decompress_file(container_path, model: CodecModel, output_path) -> np.ndarray:
    try:
        with open(container_path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise ContainerError(f"{container_path}: cannot read ({exc.strerror})") from exc
    image = decompress_image(Container.from_bytes(data), model)
    write_image(output_path, image)
    return image


__all__ = [
    "Container",
    "ContainerError",
    "TileGrid",
    "TileRecord",
    "TilingError",
    "compress_file",
    "compress_image",
    "decompress_file",
    "decompress_image",
    "entropy_decode",
    "entropy_encode",
    "pad_to_multiple",
    "read_container",
    "tile_image",
    "untile",
]
