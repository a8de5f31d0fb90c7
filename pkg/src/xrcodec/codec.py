"""Encoder, bottleneck and decoder assembled into the compression network.

Encoder: two front branches (3x3 stride-2 conv, and 2x2 max-pool followed by
a 1x1 conv) averaged, three stride-2 ConvLSTM layers, and a 1x1 bottleneck
conv whose kernel count ``beta`` sets the latent depth. Overall downsampling
is 16 in each spatial dim.

Decoder: 1x1 conv to ``decoder_width`` channels, four upsampling modules
(two parallel 2x2 ConvLSTM branches, averaged, then depth-to-space by 2) and
a final 1x1 conv to one channel.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import convlstm
from .convlstm import ConvLstmParams
from .tensor import (
    ConvSpec,
    ShapeError,
    Tensor,
    add,
    average,
    conv2d,
    depth_to_space,
    maxpool2x2,
    relu,
)

DOWNSAMPLE = 16
UPSAMPLE_STAGES = 4


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class CodecConfig:
    patch_size: int = 64
    beta: int = 32
    front_width: int = 8
    rnn_widths: tuple[int, int, int] = (16, 16, 16)
    decoder_width: int = 256
    steps: int = 2
    quantizer_bits: int = 8
    peephole: bool = False

    def __post_init__(self):
        object.__setattr__(self, "rnn_widths", tuple(int(w) for w in self.rnn_widths))
        self.validate()

    def validate(self) -> None:
        if self.patch_size < DOWNSAMPLE or self.patch_size % DOWNSAMPLE:
            raise ConfigError(f"patch_size must be a positive multiple of 16, got {self.patch_size}")
        if not 1 <= self.beta <= 256:
            raise ConfigError(f"beta must be in [1, 256], got {self.beta}")
        if self.front_width < 1:
            raise ConfigError(f"front_width must be >= 1, got {self.front_width}")
        if len(self.rnn_widths) != 3 or min(self.rnn_widths) < 1:
            raise ConfigError(f"rnn_widths must be three positive counts, got {self.rnn_widths}")
        if self.decoder_width < 1 or self.decoder_width % 4**UPSAMPLE_STAGES:
            raise ConfigError(f"decoder_width must be a positive multiple of 256, got {self.decoder_width}")
        if self.steps < 1:
            raise ConfigError(f"steps must be >= 1, got {self.steps}")
        if not 1 <= self.quantizer_bits <= 16:
            raise ConfigError(f"quantizer_bits must be in [1, 16], got {self.quantizer_bits}")

    @property
    def latent_size(self) -> int:
        return self.patch_size // DOWNSAMPLE

    @property
    def latent_shape(self) -> tuple[int, int, int]:
        return self.beta, self.latent_size, self.latent_size

    def with_(self, **changes) -> "CodecConfig":
        return replace(self, **changes)


def desk_profile(patch_size: int = 64, beta: int = 32, **kw) -> CodecConfig:
    return CodecConfig(patch_size=patch_size, beta=beta, **kw)


def full_profile(patch_size: int = 128, beta: int = 32, **kw) -> CodecConfig:
    # widths are not published; these are a plausible guess
    return CodecConfig(
        patch_size=patch_size,
        beta=beta,
        front_width=64,
        rnn_widths=(128, 256, 512),
        decoder_width=512,
        **kw,
    )


def compression_ratio(config: CodecConfig, pixel_bits: int = 8) -> float:
    """Nominal ratio: source bits over raw latent bits, i.e. 256/beta for 8-bit codes."""
    n, p = config.patch_size, config.latent_size
    return (n * n * pixel_bits) / (p * p * config.beta * config.quantizer_bits)


def raw_latent_bytes(config: CodecConfig) -> int:
    p = config.latent_size
    return p * p * config.beta * ((config.quantizer_bits + 7) // 8)


# --------------------------------------------------------------------------
# parameters


@dataclass
class Conv:
    w: Tensor
    b: Tensor
    spec: ConvSpec

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.w, self.b, self.spec)

    def tensors(self) -> list[Tensor]:
        return [self.w, self.b]


@dataclass
class CodecModel:
    config: CodecConfig
    front_conv: Conv
    front_pool_conv: Conv
    encoder_rnn: list[ConvLstmParams]
    bottleneck: Conv
    expand: Conv
    upsample: list[tuple[ConvLstmParams, ConvLstmParams]]
    output: Conv
    dtype: np.dtype = field(default=np.dtype(np.float64))

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        """All trainable tensors in fixed declaration order (the checkpoint order)."""
        out: list[tuple[str, Tensor]] = []

        def conv(prefix, c):
            out.append((f"{prefix}.w", c.w))
            out.append((f"{prefix}.b", c.b))

        def lstm(prefix, p):
            out.extend([(f"{prefix}.w_x", p.w_x), (f"{prefix}.w_h", p.w_h), (f"{prefix}.bias", p.bias)])
            if p.peephole is not None:
                for name, t in zip(("peep_i", "peep_f", "peep_o"), p.peephole):
                    out.append((f"{prefix}.{name}", t))

        conv("enc.front_conv", self.front_conv)
        conv("enc.front_pool_conv", self.front_pool_conv)
        for k, p in enumerate(self.encoder_rnn):
            lstm(f"enc.rnn{k}", p)
        conv("enc.bottleneck", self.bottleneck)
        conv("dec.expand", self.expand)
        for k, (a, b) in enumerate(self.upsample):
            lstm(f"dec.up{k}.a", a)
            lstm(f"dec.up{k}.b", b)
        conv("dec.output", self.output)
        return out

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(t.data.size for t in self.parameters())

    def astype(self, dtype) -> "CodecModel":
        """Copy with every parameter cast to ``dtype``."""
        arrays = [t.data.astype(dtype) for t in self.parameters()]
        clone = build_model(self.config, seed=0, dtype=dtype)
        for t, a in zip(clone.parameters(), arrays):
            t.data = a
        return clone


def _conv(rng, cin, cout, k, stride, dtype) -> Conv:
    bound = np.sqrt(1.0 / (cin * k * k))
    w = rng.uniform(-bound, bound, size=(cout, cin, k, k)).astype(dtype)
    b = np.zeros(cout, dtype=dtype)
    spec = ConvSpec.square(k, stride, "same", in_channels=cin, out_channels=cout)
    return Conv(Tensor(w, requires_grad=True), Tensor(b, requires_grad=True), spec)


def build_model(config: CodecConfig, seed: int = 0, dtype=np.float64) -> CodecModel:
    config.validate()
    rng = np.random.default_rng(seed)
    fw, widths = config.front_width, config.rnn_widths
    front_conv = _conv(rng, 1, fw, 3, 2, dtype)
    front_pool_conv = _conv(rng, 1, fw, 1, 1, dtype)
    enc = []
    cin = fw
    for w in widths:
        enc.append(convlstm.init_params(rng, cin, w, 3, stride=2, peephole=config.peephole, dtype=dtype))
        cin = w
    bottleneck = _conv(rng, cin, config.beta, 1, 1, dtype)
    expand = _conv(rng, config.beta, config.decoder_width, 1, 1, dtype)
    ups = []
    ch = config.decoder_width
    for _ in range(UPSAMPLE_STAGES):
        pair = tuple(
            convlstm.init_params(rng, ch, ch, 2, stride=1, peephole=config.peephole, dtype=dtype) for _ in range(2)
        )
        ups.append(pair)
        ch //= 4
    output = _conv(rng, ch, 1, 1, 1, dtype)
    # start at mid-grey so early updates fit structure rather than the DC level
    output.b.data[:] = 0.5
    return CodecModel(config, front_conv, front_pool_conv, enc, bottleneck, expand, ups, output, np.dtype(dtype))


# --------------------------------------------------------------------------
# forward passes


def _as_tensor(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x if x.dtype == dtype else Tensor(x.data.astype(dtype), requires_grad=x.requires_grad)
    return Tensor(np.asarray(x, dtype=dtype))


def encode(model: CodecModel, image) -> Tensor:
    """Images in [0, 1], shape (b, 1, N, N) -> real latent (b, beta, N/16, N/16)."""
    cfg = model.config
    x = _as_tensor(image, model.dtype)
    n = cfg.patch_size
    if x.data.ndim != 4 or x.shape[1:] != (1, n, n):
        raise ShapeError("encode", "image shape", ("b", 1, n, n), x.shape)
    a = relu(model.front_conv(x))
    b = relu(model.front_pool_conv(maxpool2x2(x)))
    h = average(a, b)
    for p in model.encoder_rnn:
        h = convlstm.layer_forward(h, p, cfg.steps)
    return relu(model.bottleneck(h))


def decode(model: CodecModel, latent, clamp: bool = True) -> Tensor:
    """Latent (b, beta, N/16, N/16) -> image (b, 1, N, N).

    ``clamp=True`` clips the output to [0, 1] outside the gradient graph; the
    trainer uses ``clamp=False``.
    """
    cfg = model.config
    z = _as_tensor(latent, model.dtype)
    if z.data.ndim != 4 or z.shape[1:] != cfg.latent_shape:
        raise ShapeError("decode", "latent shape", ("b",) + cfg.latent_shape, z.shape)
    h = relu(model.expand(z))
    for a, b in model.upsample:
        h = depth_to_space(average(convlstm.layer_forward(h, a, cfg.steps), convlstm.layer_forward(h, b, cfg.steps)), 2)
    y = model.output(h)
    if clamp:
        return Tensor(np.clip(y.data, 0.0, 1.0))
    return y


def add_quantization_noise(latent: Tensor, bits: int, rng: np.random.Generator) -> Tensor:
    """Additive uniform noise of +-q_scale/2, with q_scale taken from the latent's range."""
    lo, hi = float(latent.data.min()), float(latent.data.max())
    scale = (hi - lo) / (2**bits - 1) if hi > lo else 1.0
    noise = rng.uniform(-scale / 2, scale / 2, size=latent.shape).astype(latent.dtype)
    return add(latent, Tensor(noise))


# --------------------------------------------------------------------------
# quantization


@dataclass
class QuantizedLatent:
    codes: np.ndarray  # unsigned ints in [0, 2**bits - 1]
    q_min: float
    q_scale: float
    bits: int

    @property
    def shape(self) -> tuple[int, ...]:
        return self.codes.shape

    def to_bytes(self) -> bytes:
        """Codes as little-endian bytes: one per code for bits <= 8, two otherwise."""
        dt = "<u1" if self.bits <= 8 else "<u2"
        return self.codes.astype(dt).tobytes()

    @classmethod
    def from_bytes(cls, raw: bytes, shape, q_min: float, q_scale: float, bits: int) -> "QuantizedLatent":
        dt = "<u1" if bits <= 8 else "<u2"
        count = int(np.prod(shape))
        if len(raw) != count * np.dtype(dt).itemsize:
            raise ValueError(f"expected {count * np.dtype(dt).itemsize} code bytes, got {len(raw)}")
        codes = np.frombuffer(raw, dtype=dt).reshape(shape)
        if codes.max(initial=0) > 2**bits - 1:
            raise ValueError(f"code value exceeds {bits}-bit range")
        return cls(codes.copy(), q_min, q_scale, bits)


def quantize(latent, bits: int = 8) -> QuantizedLatent:
    """Per-tensor affine min-max quantization; a constant tensor gets scale 1 and all-zero codes."""
    if not 1 <= bits <= 16:
        raise ValueError(f"bits must be in [1, 16], got {bits}")
    x = np.asarray(latent.data if isinstance(latent, Tensor) else latent, dtype=np.float64)
    lo, hi = float(x.min()), float(x.max())
    levels = 2**bits - 1
    dt = np.uint8 if bits <= 8 else np.uint16
    if hi == lo:
        return QuantizedLatent(np.zeros(x.shape, dtype=dt), lo, 1.0, bits)
    scale = (hi - lo) / levels
    codes = np.clip(np.floor((x - lo) / scale + 0.5), 0, levels).astype(dt)
    return QuantizedLatent(codes, lo, scale, bits)


def dequantize(q: QuantizedLatent) -> np.ndarray:
    return q.q_min + q.codes.astype(np.float64) * q.q_scale
