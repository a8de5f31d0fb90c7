"""8-bit grayscale image I/O: binary PGM (P5) natively, PNG through Pillow."""

from __future__ import annotations

import os
import re

import numpy as np


class ImageFormatError(ValueError):
    pass


_PGM_HEADER = re.compile(rb"P5(?:\s|#[^\n]*\n)+(\d+)(?:\s|#[^\n]*\n)+(\d+)(?:\s|#[^\n]*\n)+(\d+)\s")


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    return parse_pgm(data, source=str(path))


def parse_pgm(data: bytes, source: str = "<bytes>") -> np.ndarray:
    m = _PGM_HEADER.match(data)
    if not m:
        raise ImageFormatError(f"{source}: not a binary PGM (P5) file")
    width, height, maxval = (int(g) for g in m.groups())
    if width < 1 or height < 1:
        raise ImageFormatError(f"{source}: bad dimensions {width}x{height}")
    if not 0 < maxval <= 255:
        raise ImageFormatError(f"{source}: only 8-bit PGM is supported (maxval {maxval})")
    start = m.end()
    pixels = data[start : start + width * height]
    if len(pixels) != width * height:
        raise ImageFormatError(f"{source}: truncated pixel data ({len(pixels)} of {width * height} bytes)")
    return np.frombuffer(pixels, dtype=np.uint8).reshape(height, width).copy()


def write_pgm(path, image: np.ndarray) -> None:
    img = np.asarray(image)
    if img.ndim != 2 or img.dtype != np.uint8:
        raise ImageFormatError(f"write_pgm expects a 2-D uint8 array, got {img.dtype} {img.shape}")
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (w, h))
        fh.write(np.ascontiguousarray(img).tobytes())


def read_image(path) -> np.ndarray:
    """Load an 8-bit grayscale image as a 2-D uint8 array."""
    try:
        with open(path, "rb") as fh:
            head = fh.read(8)
    except OSError as exc:
        raise ImageFormatError(f"{path}: cannot read ({exc.strerror})") from exc
    if head.startswith(b"P5"):
        return read_pgm(path)
    if head.startswith(b"\x89PNG"):
        from PIL import Image

        with Image.open(path) as im:
            if im.mode not in ("L", "P", "1"):
                raise ImageFormatError(f"{path}: PNG is not grayscale (mode {im.mode})")
            return np.asarray(im.convert("L"), dtype=np.uint8).copy()
    raise ImageFormatError(f"{path}: unsupported image format (expected PGM P5 or PNG)")


def write_image(path, image: np.ndarray) -> None:
    if os.fspath(path).lower().endswith(".png"):
        from PIL import Image

        Image.fromarray(np.asarray(image, dtype=np.uint8), mode="L").save(path)
    else:
        write_pgm(path, image)
