"""Synthetic radiograph-like images for desk-scale training and tests.

Images are smooth low-frequency noise overlaid with two dark elliptical
fields, a bright vertical band and a few faint curved "rib" lines.
"""

from __future__ import annotations

import os

import numpy as np

from .imageio import write_pgm


def band_limited_noise(size: int, rng: np.random.Generator, cutoff: float = 0.08) -> np.ndarray:
    spec = np.fft.fft2(rng.standard_normal((size, size)))
    fy = np.fft.fftfreq(size)[:, None]
    fx = np.fft.fftfreq(size)[None, :]
    spec *= np.exp(-(fx**2 + fy**2) / (2 * cutoff**2))
    field = np.real(np.fft.ifft2(spec))
    field -= field.mean()
    peak = np.abs(field).max()
    return field / peak if peak > 0 else field


def synthetic_radiograph(size: int, rng: np.random.Generator, detail: float = 1.0) -> np.ndarray:
    """One ``size`` x ``size`` uint8 image."""
    yy, xx = np.mgrid[0:size, 0:size] / size
    img = 0.55 + 0.12 * band_limited_noise(size, rng)

    for side in (-1, 1):
        cx = 0.5 + side * rng.uniform(0.18, 0.26)
        cy = rng.uniform(0.45, 0.55)
        ax, ay = rng.uniform(0.12, 0.18), rng.uniform(0.25, 0.35)
        r = ((xx - cx) / ax) ** 2 + ((yy - cy) / ay) ** 2
        img -= 0.22 / (1 + np.exp((r - 1) * 6))

    spine = np.exp(-(((xx - 0.5 - rng.uniform(-0.03, 0.03)) / 0.05) ** 2))
    img += 0.15 * spine

    for _ in range(rng.integers(3, 6)):
        y0, curve = rng.uniform(0.15, 0.85), rng.uniform(0.1, 0.3)
        line = y0 + curve * (xx - 0.5) ** 2
        img += 0.05 * detail * np.exp(-(((yy - line) / 0.015) ** 2))

    return np.clip(np.round(img * 255), 0, 255).astype(np.uint8)


def write_synthetic_corpus(
    directory,
    patients: dict[str, int] | None = None,
    images_per_patient: int = 2,
    size: int = 256,
    seed: int = 0,
) -> str:
    """Write PGM images plus an ``index.tsv``; returns the index path.

    ``patients`` maps split name to patient count, e.g. ``{"train": 4, "val": 1, "test": 1}``.
    """
    patients = patients or {"train": 4, "val": 1, "test": 1}
    rng = np.random.default_rng(seed)
    os.makedirs(directory, exist_ok=True)
    lines = []
    pid = 0
    for split, count in patients.items():
        for _ in range(count):
            for k in range(images_per_patient):
                rel = f"p{pid:04d}_{k}.pgm"
                write_pgm(os.path.join(directory, rel), synthetic_radiograph(size, rng))
                lines.append(f"{rel}\tP{pid:04d}\t{split}\n")
            pid += 1
    index = os.path.join(directory, "index.tsv")
    with open(index, "w") as fh:
        fh.writelines(lines)
    return index
