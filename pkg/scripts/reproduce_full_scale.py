"""Full-scale training and evaluation against the published chest X-ray results.

Needs a real radiograph corpus (e.g. the NIH ChestX-ray8 images) described by a
tab-separated index (relative path, patient id, split) with patient-disjoint
splits, plus days of CPU time per configuration. It is never run by the test
suite; the targets are informational.

    python3 scripts/reproduce_full_scale.py --corpus index.tsv --workdir runs/
    python3 scripts/reproduce_full_scale.py --corpus index.tsv --workdir runs/ --only 128:32 --steps 200000

Each configuration trains the full-scale profile (batch 16, Adam 1e-4), then
reports mean SSIM/PSNR on 500 test patches next to the published values. A row
is marked "ok" when it lands within 0.02 SSIM and 2 dB PSNR of the target.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from xrcodec.checkpoint import load_checkpoint, save_checkpoint
from xrcodec.codec import build_model, compression_ratio, full_profile
from xrcodec.metrics import evaluate
from xrcodec.train import CorpusIndex, TrainRunConfig, sample_crops, train

# (patch size, beta) -> (SSIM, PSNR dB) published for the proposed model
TARGETS = {
    (128, 128): (0.9645, 36.0152),
    (128, 64): (0.9592, 35.9795),
    (128, 32): (0.9579, 35.9325),
    (256, 128): (0.9525, 34.9721),
    (256, 64): (0.9517, 34.9002),
    (256, 32): (0.9509, 34.8701),
}
SSIM_TOL = 0.02
PSNR_TOL = 2.0
TEST_PATCHES = 500


def _parse_only(values):
    out = []
    for v in values:
        n, beta = v.split(":")
        key = (int(n), int(beta))
        if key not in TARGETS:
            raise SystemExit(f"no published target for N={key[0]} beta={key[1]}")
        out.append(key)
    return out


def run_one(index: CorpusIndex, n: int, beta: int, args) -> tuple[float, float]:
    ckpt = os.path.join(args.workdir, f"N{n}_b{beta}", "model.xrcw")
    if args.resume and os.path.exists(ckpt):
        model = load_checkpoint(ckpt)
    else:
        model = build_model(full_profile(n, beta), seed=args.seed, dtype=np.float32)
        run = TrainRunConfig(batch_size=16, max_steps=args.steps, lr=args.lr, seed=args.seed, val_every=1000)
        train(model, index, run, workdir=os.path.dirname(ckpt))
        save_checkpoint(model, ckpt)
    patches = sample_crops(index, "test", n, TEST_PATCHES, seed=args.seed + 100).pixels
    rep = evaluate(model, patches)
    return rep.mean_ssim, rep.mean_psnr


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    p.add_argument("--corpus", required=True)
    p.add_argument("--workdir", required=True)
    p.add_argument("--steps", type=int, default=100_000)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--only", nargs="*", default=[], help="subset as N:beta, e.g. 128:32")
    p.add_argument("--resume", action="store_true", help="evaluate existing checkpoints instead of retraining")
    args = p.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    index = CorpusIndex.load(args.corpus)
    keys = _parse_only(args.only) or sorted(TARGETS)
    print(f"{'N':>4} {'ratio':>5} {'SSIM':>7} {'target':>7} {'PSNR':>8} {'target':>8}  verdict")
    all_ok = True
    for n, beta in keys:
        s, q = run_one(index, n, beta, args)
        ts, tq = TARGETS[(n, beta)]
        ok = abs(s - ts) <= SSIM_TOL and abs(q - tq) <= PSNR_TOL
        all_ok &= ok
        ratio = compression_ratio(full_profile(n, beta))
        print(f"{n:>4} {ratio:>5g} {s:7.4f} {ts:7.4f} {q:8.4f} {tq:8.4f}  {'ok' if ok else 'off'}", flush=True)
    return 0 if all_ok else 1


if __name__ == "__main__":
    sys.exit(main())
