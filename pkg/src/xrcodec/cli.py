"""Command-line entry point: ``xrcodec {train,compress,decompress,eval,info}``."""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .codec import ConfigError, build_model, desk_profile, full_profile
from .container import ContainerError, TilingError, compress_file, decompress_file, read_container
from .entropy import EntropyError
from .imageio import ImageFormatError
from .metrics import evaluate
from .train import CorpusError, CorpusIndex, TrainingDiverged, TrainRunConfig, sample_crops, train

EXPECTED_ERRORS = (
    CheckpointError,
    ConfigError,
    ContainerError,
    CorpusError,
    EntropyError,
    ImageFormatError,
    TilingError,
    TrainingDiverged,
    OSError,
    ValueError,
)


def _cmd_train(args) -> int:
    profile = full_profile if args.profile == "full" else desk_profile
    config = profile(args.size, args.beta, steps=args.recurrence, quantizer_bits=args.bits)
    model = build_model(config, seed=args.seed, dtype=np.float32)
    index = CorpusIndex.load(args.corpus)
    run = TrainRunConfig(
        batch_size=args.batch_size,
        max_steps=args.steps,
        lr=args.lr,
        seed=args.seed,
        quantization_noise=args.quant_noise,
        clip_norm=args.clip_norm,
        val_every=args.val_every,
        checkpoint_every=args.checkpoint_every,
    )
    workdir = args.workdir or os.path.splitext(args.out)[0] + "_run"
    model, history = train(model, index, run, workdir=workdir)
    save_checkpoint(model, args.out)
    if history.losses:
        print(f"trained {len(history.losses)} steps: loss {history.losses[0]:.5f} -> {history.losses[-1]:.5f}")
    print(f"checkpoint written to {args.out}")
    return 0


def _cmd_compress(args) -> int:
    model = load_checkpoint(args.ckpt)
    result = compress_file(args.input, model, args.out)
    c = result.container
    print(
        f"{args.out}: {c.height}x{c.width}, {len(c.tiles)} tiles of {c.tile_size}, beta {c.beta}, "
        f"nominal ratio {result.nominal_ratio:g}, effective ratio {result.effective_ratio:.3f}"
    )
    return 0


def _cmd_decompress(args) -> int:
    model = load_checkpoint(args.ckpt)
    image = decompress_file(args.input, model, args.out)
    print(f"{args.out}: {image.shape[0]}x{image.shape[1]}")
    return 0


def _cmd_eval(args) -> int:
    model = load_checkpoint(args.ckpt)
    index = CorpusIndex.load(args.corpus)
    batch = sample_crops(index, args.split, model.config.patch_size, args.count, seed=args.seed)
    names = [f"{os.path.basename(p)}@{top},{left}" for p, _, top, left in batch.sources]
    report = evaluate(model, batch.pixels, names)
    report.write(args.report)
    print(report.table())
    return 0


def _cmd_info(args) -> int:
    c = read_container(args.container)
    size = os.path.getsize(args.container)
    fields = c.describe()
    fields["file_bytes"] = size
    for key, value in fields.items():
        if isinstance(value, float):
            value = "inf" if math.isinf(value) else f"{value:.6g}"
        print(f"{key}: {value}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="xrcodec", description="Convolutional-recurrent X-ray image codec.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a codec on a corpus index")
    p.add_argument("--corpus", required=True, help="tab-separated index: path, patient id, split")
    p.add_argument("--size", type=int, default=128, help="patch size N (multiple of 16)")
    p.add_argument("--beta", type=int, default=32, help="latent channels; nominal ratio is 256/beta")
    p.add_argument("--steps", type=int, default=1000, help="optimizer steps")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output checkpoint path")
    p.add_argument("--profile", choices=("desk", "full"), default="desk")
    p.add_argument("--recurrence", type=int, default=2, help="ConvLSTM steps per layer")
    p.add_argument("--bits", type=int, default=8, help="quantizer bits")
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--quant-noise", action="store_true", help="train with uniform quantization noise")
    p.add_argument("--clip-norm", type=float, default=None)
    p.add_argument("--val-every", type=int, default=100)
    p.add_argument("--checkpoint-every", type=int, default=1000)
    p.add_argument("--workdir", default=None, help="metrics log and periodic checkpoints (default: <out>_run)")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("compress", help="compress a PGM/PNG image into a container")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_compress)

    p = sub.add_parser("decompress", help="restore an image from a container")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_decompress)

    p = sub.add_parser("eval", help="SSIM/PSNR report on sampled patches")
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--ckpt", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--count", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("info", help="print container header fields")
    p.add_argument("container")
    p.set_defaults(func=_cmd_info)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except EXPECTED_ERRORS as exc:
        print(f"xrcodec {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
