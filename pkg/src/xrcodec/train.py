"""Joint encoder/decoder training: L1 loss, Adam, patient-disjoint crop sampling."""

from __future__ import annotations

import logging
import math
import os
from contextlib import nullcontext
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import save_checkpoint
from .codec import CodecModel, add_quantization_noise, decode, encode
from .imageio import read_image
from .metrics import evaluate
from .tensor import GradTape, Tensor, backward, mean_abs_diff

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")


def l1_loss(reconstruction: Tensor, target: Tensor) -> Tensor:
    return mean_abs_diff(reconstruction, target)


# --------------------------------------------------------------------------
# Adam


class NonFiniteGradient(FloatingPointError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"non-finite gradient for parameter {name!r}")


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params, **hyper) -> "AdamState":
        state = cls(**hyper)
        state.m = [np.zeros_like(np.asarray(p)) for p in params]
        state.v = [np.zeros_like(np.asarray(p)) for p in params]
        return state


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState, names=None) -> list[np.ndarray]:
    """Bias-corrected Adam update. Returns new parameter arrays; ``state`` is updated in place."""
    if len(params) != len(grads):
        raise ValueError(f"{len(params)} parameters but {len(grads)} gradients")
    names = names or [f"param{k}" for k in range(len(params))]
    for name, p, g in zip(names, params, grads):
        if np.shape(p) != np.shape(g):
            raise ValueError(f"gradient shape {np.shape(g)} does not match parameter {name!r} {np.shape(p)}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(name)
    if not state.m:
        state.m = [np.zeros_like(np.asarray(p)) for p in params]
        state.v = [np.zeros_like(np.asarray(p)) for p in params]
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    out = []
    for k, (p, g) in enumerate(zip(params, grads)):
        state.m[k] = b1 * state.m[k] + (1.0 - b1) * g
        state.v[k] = b2 * state.v[k] + (1.0 - b2) * (g * g)
        m_hat = state.m[k] / c1
        v_hat = state.v[k] / c2
        out.append(p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps))
    return out


# --------------------------------------------------------------------------
# corpus


class CorpusError(ValueError):
    pass


@dataclass(frozen=True)
class CorpusEntry:
    path: str
    patient: str
    split: str


@dataclass
class CorpusIndex:
    entries: list[CorpusEntry]

    def __post_init__(self):
        owner: dict[str, str] = {}
        for e in self.entries:
            if e.split not in SPLITS:
                raise CorpusError(f"{e.path}: unknown split {e.split!r}")
            prev = owner.setdefault(e.patient, e.split)
            if prev != e.split:
                raise CorpusError(f"patient {e.patient!r} appears in both {prev!r} and {e.split!r}")

    def split(self, name: str) -> list[CorpusEntry]:
        return [e for e in self.entries if e.split == name]

    def patients(self, name: str) -> set[str]:
        return {e.patient for e in self.entries if e.split == name}

    @classmethod
    def load(cls, path) -> "CorpusIndex":
        """Read a tab-separated index: relative image path, patient id, split."""
        base = os.path.dirname(os.path.abspath(path))
        entries = []
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.rstrip("\n")
                if not line.strip() or line.startswith("#"):
                    continue
                parts = line.split("\t")
                if len(parts) != 3:
                    raise CorpusError(f"{path}:{lineno}: expected 3 tab-separated fields, got {len(parts)}")
                rel, patient, split = parts
                entries.append(CorpusEntry(os.path.join(base, rel), patient, split))
        return cls(entries)

    def write(self, path) -> None:
        base = os.path.dirname(os.path.abspath(path))
        with open(path, "w") as fh:
            for e in self.entries:
                fh.write(f"{os.path.relpath(e.path, base)}\t{e.patient}\t{e.split}\n")


@dataclass
class CropBatch:
    pixels: np.ndarray  # (count, N, N) uint8
    sources: list[tuple[str, str, int, int]]  # (path, patient, top, left)

    def as_input(self, dtype=np.float64) -> np.ndarray:
        return (self.pixels.astype(dtype) / 255.0)[:, None]


class CropSampler:
    """Uniform random N x N crops from one split, deterministic for a given seed.

    Source images are visited in shuffled epochs (each image once per pass,
    order redrawn every pass); the crop corner within an image is uniform.
    """

    def __init__(self, index: CorpusIndex, split: str, size: int, seed: int = 0):
        self.size = size
        self.rng = np.random.default_rng(seed)
        self._order: list[int] = []
        self.images: list[tuple[CorpusEntry, np.ndarray]] = []
        for e in index.split(split):
            img = read_image(e.path)
            if img.shape[0] < size or img.shape[1] < size:
                log.warning("skipping %s: %dx%d is smaller than the %d-pixel crop", e.path, *img.shape, size)
                continue
            self.images.append((e, img))
        if not self.images:
            raise CorpusError(f"split {split!r} has no usable images for {size}x{size} crops")

    def sample(self, count: int) -> CropBatch:
        n = self.size
        pixels = np.empty((count, n, n), dtype=np.uint8)
        sources = []
        for k in range(count):
            if not self._order:
                self._order = self.rng.permutation(len(self.images)).tolist()
            entry, img = self.images[self._order.pop()]
            top = int(self.rng.integers(img.shape[0] - n + 1))
            left = int(self.rng.integers(img.shape[1] - n + 1))
            pixels[k] = img[top : top + n, left : left + n]
            sources.append((entry.path, entry.patient, top, left))
        return CropBatch(pixels, sources)


def sample_crops(index: CorpusIndex, split: str, size: int, count: int, seed: int = 0) -> CropBatch:
    return CropSampler(index, split, size, seed).sample(count)


# --------------------------------------------------------------------------
# training loop


@dataclass
class TrainRunConfig:
    batch_size: int = 16
    max_steps: int = 1000
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    quantization_noise: bool = False
    clip_norm: float | None = None
    val_every: int = 100
    val_count: int = 8
    checkpoint_every: int = 1000
    deterministic: bool = True

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_steps < 0:
            raise ValueError(f"max_steps must be >= 0, got {self.max_steps}")


@dataclass
class TrainLog:
    steps: list[int] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)
    val: dict[int, tuple[float, float]] = field(default_factory=dict)

    def lines(self) -> list[str]:
        out = []
        for s, loss in zip(self.steps, self.losses):
            vp, vs = self.val.get(s, (math.nan, math.nan))
            out.append(f"{s}\t{loss!r}\t{vp!r}\t{vs!r}")
        return out


class TrainingDiverged(FloatingPointError):
    def __init__(self, step: int, model: CodecModel, checkpoint: str | None):
        self.step = step
        self.model = model
        self.checkpoint = checkpoint
        where = f"; last good checkpoint {checkpoint}" if checkpoint else ""
        super().__init__(f"non-finite loss at step {step}{where}")


def _clip(grads: list[np.ndarray], max_norm: float) -> list[np.ndarray]:
    total = math.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads))
    if total <= max_norm or total == 0.0:
        return grads
    return [g * (max_norm / total) for g in grads]


def train_step(model: CodecModel, batch: np.ndarray, state: AdamState, run: TrainRunConfig, rng=None) -> float:
    """One forward/backward/update pass on a (b, 1, N, N) batch in [0, 1]. Returns the batch L1 loss."""
    names, params = zip(*model.named_parameters())
    x = Tensor(batch.astype(model.dtype, copy=False))
    with GradTape() as tape:
        z = encode(model, x)
        if run.quantization_noise:
            z = add_quantization_noise(z, model.config.quantizer_bits, rng)
        loss = l1_loss(decode(model, z, clamp=False), x)
    value = float(loss.data.reshape(()))
    if not math.isfinite(value):
        return value
    grads = backward(tape, loss, params)
    if run.clip_norm is not None:
        grads = _clip(grads, run.clip_norm)
    new = adam_step([p.data for p in params], grads, state, names=list(names))
    for p, arr in zip(params, new):
        p.data = arr.astype(model.dtype, copy=False)
    return value


def _single_thread():
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        return nullcontext()
    return threadpool_limits(limits=1)


def train(
    model: CodecModel,
    corpus: CorpusIndex | CropSampler,
    run: TrainRunConfig,
    workdir: str | None = None,
    val_corpus: CorpusIndex | None = None,
) -> tuple[CodecModel, TrainLog]:
    """Train ``model`` in place.

    ``workdir``, when given, receives ``metrics.log`` (step, loss, val_psnr,
    val_ssim per line), periodic ``step_XXXXXXX.xrcw`` checkpoints and
    ``final.xrcw``. On a non-finite loss the parameters are restored to the
    last good step and :class:`TrainingDiverged` is raised.
    """
    history = TrainLog()
    if run.max_steps == 0:
        return model, history

    n = model.config.patch_size
    sampler = corpus if isinstance(corpus, CropSampler) else CropSampler(corpus, "train", n, seed=run.seed)
    val_patches = None
    vsrc = val_corpus if val_corpus is not None else (corpus if isinstance(corpus, CorpusIndex) else None)
    if vsrc is not None and vsrc.split("val") and run.val_every > 0:
        val_patches = sample_crops(vsrc, "val", n, run.val_count, seed=run.seed + 1).pixels

    state = AdamState.for_params([p.data for p in model.parameters()], lr=run.lr, beta1=run.beta1, beta2=run.beta2, eps=run.eps)
    noise_rng = np.random.default_rng(run.seed + 2)
    metrics_fh = None
    last_ckpt = None
    if workdir:
        os.makedirs(workdir, exist_ok=True)
        metrics_fh = open(os.path.join(workdir, "metrics.log"), "a")

    try:
        with _single_thread() if run.deterministic else nullcontext():
            for step in range(1, run.max_steps + 1):
                good = [p.data for p in model.parameters()]
                batch = sampler.sample(run.batch_size).as_input(model.dtype)
                loss = train_step(model, batch, state, run, noise_rng)
                if not math.isfinite(loss):
                    for p, arr in zip(model.parameters(), good):
                        p.data = arr
                    raise TrainingDiverged(step, model, last_ckpt)
                history.steps.append(step)
                history.losses.append(loss)
                vp = vs = math.nan
                if val_patches is not None and step % run.val_every == 0:
                    rep = evaluate(model, val_patches)
                    vp, vs = rep.mean_psnr, rep.mean_ssim
                    history.val[step] = (vp, vs)
                    log.info("step %d loss %.5f val psnr %.3f ssim %.4f", step, loss, vp, vs)
                if metrics_fh:
                    metrics_fh.write(f"{step}\t{loss!r}\t{vp!r}\t{vs!r}\n")
                    metrics_fh.flush()
                if workdir and run.checkpoint_every > 0 and step % run.checkpoint_every == 0:
                    last_ckpt = os.path.join(workdir, f"step_{step:07d}.xrcw")
                    save_checkpoint(model, last_ckpt)
        if workdir:
            save_checkpoint(model, os.path.join(workdir, "final.xrcw"))
    finally:
        if metrics_fh:
            metrics_fh.close()
    return model, history
