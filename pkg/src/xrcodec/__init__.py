"""Convolutional-recurrent codec for 8-bit grayscale radiographs."""

from .codec import (
    CodecConfig,
    CodecModel,
    QuantizedLatent,
    build_model,
    compression_ratio,
    decode,
    dequantize,
    desk_profile,
    encode,
    full_profile,
    quantize,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .metrics import EvalReport, SsimParams, evaluate, psnr, ssim

__version__ = "0.1.0"

__all__ = [
    "CodecConfig",
    "CodecModel",
    "EvalReport",
    "QuantizedLatent",
    "SsimParams",
    "build_model",
    "compression_ratio",
    "decode",
    "dequantize",
    "desk_profile",
    "encode",
    "evaluate",
    "load_checkpoint",
    "full_profile",
    "psnr",
    "quantize",
    "save_checkpoint",
    "ssim",
]
