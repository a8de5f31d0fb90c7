"""PSNR and SSIM, plus corpus-level evaluation of a codec model."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .codec import CodecModel, compression_ratio, decode, dequantize, encode, quantize
from .entropy import entropy_encode

TILE_RECORD_OVERHEAD = 8 + 8 + 4  # q_min, q_scale, payload length


def psnr(a, b, max_value: float = 255.0) -> float:
    """Peak signal-to-noise ratio in dB; ``math.inf`` when the images are identical."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"psnr: shape mismatch {a.shape} vs {b.shape}")
    if max_value <= 0:
        raise ValueError(f"psnr: max_value must be positive, got {max_value}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(max_value * max_value / mse)


@dataclass(frozen=True)
class SsimParams:
    window: str = "gaussian"  # or "uniform"
    size: int = 11
    sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    dynamic_range: float = 255.0

    @property
    def c1(self) -> float:
        return (self.k1 * self.dynamic_range) ** 2

    @property
    def c2(self) -> float:
        return (self.k2 * self.dynamic_range) ** 2

    def kernel_1d(self) -> np.ndarray:
        if self.window == "uniform":
            return np.full(self.size, 1.0 / self.size)
        if self.window != "gaussian":
            raise ValueError(f"unknown SSIM window {self.window!r}")
        r = np.arange(self.size) - (self.size - 1) / 2
        g = np.exp(-(r**2) / (2 * self.sigma**2))
        return g / g.sum()


UNIFORM_8 = SsimParams(window="uniform", size=8)


def _filter_valid(img: np.ndarray, k: np.ndarray) -> np.ndarray:
    n = k.size
    rows = sliding_window_view(img, n, axis=1) @ k
    return sliding_window_view(rows, n, axis=0) @ k


def ssim_map(a, b, params: SsimParams = SsimParams()) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"ssim: shape mismatch {a.shape} vs {b.shape}")
    if a.ndim != 2:
        raise ValueError(f"ssim: expected 2-D images, got shape {a.shape}")
    if min(a.shape) < params.size:
        raise ValueError(f"ssim: image {a.shape} smaller than the {params.size}x{params.size} window")
    k = params.kernel_1d()
    mu_a = _filter_valid(a, k)
    mu_b = _filter_valid(b, k)
    var_a = _filter_valid(a * a, k) - mu_a * mu_a
    var_b = _filter_valid(b * b, k) - mu_b * mu_b
    cov = _filter_valid(a * b, k) - mu_a * mu_b
    c1, c2 = params.c1, params.c2
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return num / den


def ssim(a, b, params: SsimParams = SsimParams()) -> float:
    """Mean structural similarity over all window positions fully inside the image."""
    return float(ssim_map(a, b, params).mean())


def to_uint8(image01: np.ndarray) -> np.ndarray:
    return np.clip(np.floor(np.asarray(image01) * 255.0 + 0.5), 0, 255).astype(np.uint8)


# --------------------------------------------------------------------------
# evaluation


@dataclass
class ImageScore:
    name: str
    ssim: float
    psnr: float
    nominal_ratio: float
    effective_ratio: float


@dataclass
class EvalReport:
    config_id: str
    images: list[ImageScore] = field(default_factory=list)

    @property
    def mean_ssim(self) -> float:
        return float(np.mean([s.ssim for s in self.images])) if self.images else math.nan

    @property
    def mean_psnr(self) -> float:
        return float(np.mean([s.psnr for s in self.images])) if self.images else math.nan

    @property
    def nominal_ratio(self) -> float:
        return self.images[0].nominal_ratio if self.images else math.nan

    @property
    def mean_effective_ratio(self) -> float:
        return float(np.mean([s.effective_ratio for s in self.images])) if self.images else math.nan

    def lines(self) -> list[str]:
        """One tab-separated record per image: name, ssim, psnr_db, nominal_ratio, effective_ratio."""
        return [
            f"{s.name}\t{s.ssim!r}\t{s.psnr!r}\t{s.nominal_ratio!r}\t{s.effective_ratio!r}" for s in self.images
        ]

    def write(self, path) -> None:
        with open(path, "w") as fh:
            for line in self.lines():
                fh.write(line + "\n")

    def table(self) -> str:
        rows = [f"config {self.config_id}", f"{'image':<32} {'SSIM':>8} {'PSNR dB':>9} {'nominal':>8} {'effective':>9}"]
        for s in self.images:
            rows.append(f"{s.name:<32} {s.ssim:8.4f} {s.psnr:9.4f} {s.nominal_ratio:8.2f} {s.effective_ratio:9.2f}")
        rows.append(
            f"{'mean':<32} {self.mean_ssim:8.4f} {self.mean_psnr:9.4f} {self.nominal_ratio:8.2f} "
            f"{self.mean_effective_ratio:9.2f}"
        )
        return "\n".join(rows)


def read_report(path) -> list[tuple[str, float, float, float, float]]:
    out = []
    with open(path) as fh:
        for line in fh:
            name, *vals = line.rstrip("\n").split("\t")
            out.append((name, *(float(v) for v in vals)))
    return out


def config_id(model: CodecModel) -> str:
    c = model.config
    widths = "-".join(str(w) for w in c.rnn_widths)
    return f"N{c.patch_size}_b{c.beta}_f{c.front_width}_r{widths}_d{c.decoder_width}_T{c.steps}_q{c.quantizer_bits}"


def reconstruct(model: CodecModel, patches: np.ndarray) -> tuple[np.ndarray, list[int]]:
    """Run the full codec (with quantization) on uint8 patches (n, N, N).

    Returns the uint8 reconstructions and each patch's tile-record size in bytes.
    """
    cfg = model.config
    recon = np.empty_like(patches)
    sizes = []
    for k, patch in enumerate(patches):
        x = (patch.astype(np.float64) / 255.0)[None, None]
        q = quantize(encode(model, x).data[0], cfg.quantizer_bits)
        sizes.append(TILE_RECORD_OVERHEAD + len(entropy_encode(q.to_bytes())))
        y = decode(model, dequantize(q)[None])
        recon[k] = to_uint8(y.data[0, 0])
    return recon, sizes


def evaluate(
    model: CodecModel,
    patches: np.ndarray,
    names: Sequence[str] | None = None,
    ssim_params: SsimParams = SsimParams(),
) -> EvalReport:
    patches = np.asarray(patches)
    n = model.config.patch_size
    if patches.ndim != 3 or patches.shape[1:] != (n, n):
        raise ValueError(f"evaluate: patches must be (count, {n}, {n}) for this checkpoint, got {patches.shape}")
    names = list(names) if names is not None else [f"patch{k:05d}" for k in range(len(patches))]
    recon, sizes = reconstruct(model, patches)
    nominal = compression_ratio(model.config)
    report = EvalReport(config_id(model))
    for name, orig, rec, size in zip(names, patches, recon, sizes):
        report.images.append(ImageScore(name, ssim(orig, rec, ssim_params), psnr(orig, rec), nominal, n * n / size))
    return report
