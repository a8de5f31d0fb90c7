"""Convolutional LSTM cell and layer.

The four gate convolutions are stored stacked along the output-channel axis
in the order input, forget, output, candidate, so one convolution per path
produces all gate pre-activations at once.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import (
    ConvSpec,
    ShapeError,
    Tensor,
    add,
    channel_slice,
    conv2d,
    conv_output_size,
    mul,
    scale_channels,
    sigmoid,
    tanh,
)

GATES = ("input", "forget", "output", "candidate")


@dataclass
class ConvLstmParams:
    w_x: Tensor  # (4*hidden, in, k, k)
    w_h: Tensor  # (4*hidden, hidden, k, k)
    bias: Tensor  # (4*hidden,)
    stride: int = 1
    peephole: tuple[Tensor, Tensor, Tensor] | None = None  # per-channel c->i, c->f, c'->o

    def __post_init__(self):
        four_h, cin, kh, kw = self.w_x.shape
        if four_h % 4:
            raise ShapeError("ConvLstmParams", "gate channels", "multiple of 4", four_h)
        hidden = four_h // 4
        if self.w_h.shape != (four_h, hidden, kh, kw):
            raise ShapeError("ConvLstmParams", "w_h shape", (four_h, hidden, kh, kw), self.w_h.shape)
        if self.bias.shape != (four_h,):
            raise ShapeError("ConvLstmParams", "bias shape", (four_h,), self.bias.shape)
        if self.peephole is not None:
            for p in self.peephole:
                if p.shape != (hidden,):
                    raise ShapeError("ConvLstmParams", "peephole shape", (hidden,), p.shape)

    @property
    def hidden(self) -> int:
        return self.w_x.shape[0] // 4

    @property
    def in_channels(self) -> int:
        return self.w_x.shape[1]

    @property
    def kernel(self) -> int:
        return self.w_x.shape[2]

    @property
    def input_spec(self) -> ConvSpec:
        return ConvSpec.square(self.kernel, self.stride, "same")

    @property
    def hidden_spec(self) -> ConvSpec:
        return ConvSpec.square(self.kernel, 1, "same")

    def tensors(self) -> list[Tensor]:
        out = [self.w_x, self.w_h, self.bias]
        if self.peephole is not None:
            out.extend(self.peephole)
        return out

    def gate(self, name: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Views of ``(W_x, W_h, b)`` for one gate."""
        k = GATES.index(name)
        h = self.hidden
        sl = slice(k * h, (k + 1) * h)
        return self.w_x.data[sl], self.w_h.data[sl], self.bias.data[sl]


@dataclass
class ConvLstmState:
    hidden: Tensor
    cell: Tensor
    fresh: bool = False  # all zeros; lets the first step skip the recurrent conv

    def __post_init__(self):
        if self.hidden.shape != self.cell.shape:
            raise ShapeError("ConvLstmState", "hidden/cell shape", self.hidden.shape, self.cell.shape)

    @classmethod
    def zeros(cls, batch: int, channels: int, height: int, width: int, dtype=np.float64) -> "ConvLstmState":
        shape = (batch, channels, height, width)
        return cls(Tensor(np.zeros(shape, dtype=dtype)), Tensor(np.zeros(shape, dtype=dtype)), fresh=True)


def init_params(
    rng: np.random.Generator,
    in_channels: int,
    hidden: int,
    kernel: int,
    stride: int = 1,
    peephole: bool = False,
    dtype=np.float64,
) -> ConvLstmParams:
    """Uniform +-sqrt(1/fan_in) kernels, zero biases except the forget gate at 1.0."""
    bx = np.sqrt(1.0 / (in_channels * kernel * kernel))
    bh = np.sqrt(1.0 / (hidden * kernel * kernel))
    w_x = rng.uniform(-bx, bx, size=(4 * hidden, in_channels, kernel, kernel))
    w_h = rng.uniform(-bh, bh, size=(4 * hidden, hidden, kernel, kernel))
    bias = np.zeros(4 * hidden)
    bias[hidden : 2 * hidden] = 1.0
    peep = None
    if peephole:
        peep = tuple(Tensor(np.zeros(hidden, dtype=dtype), requires_grad=True) for _ in range(3))
    return ConvLstmParams(
        Tensor(w_x.astype(dtype), requires_grad=True),
        Tensor(w_h.astype(dtype), requires_grad=True),
        Tensor(bias.astype(dtype), requires_grad=True),
        stride=stride,
        peephole=peep,
    )


def output_size(params: ConvLstmParams, height: int, width: int) -> tuple[int, int]:
    s = params.stride
    return conv_output_size(height, params.kernel, s, "same"), conv_output_size(width, params.kernel, s, "same")


def cell_step(x: Tensor, state: ConvLstmState, params: ConvLstmParams) -> ConvLstmState:
    """One ConvLSTM update (no peephole terms unless the params carry them).

    i = sig(Wxi*x + Whi*h + bi), f and o likewise, g = tanh(Wxg*x + Whg*h + bg),
    c' = f.c + i.g, h' = o.tanh(c').
    """
    if x.data.ndim != 4:
        raise ShapeError("cell_step", "input rank", 4, x.data.ndim)
    if x.shape[1] != params.in_channels:
        raise ShapeError("cell_step", "input channels", params.in_channels, x.shape[1])
    ho, wo = output_size(params, x.shape[2], x.shape[3])
    expected = (x.shape[0], params.hidden, ho, wo)
    if state.hidden.shape != expected:
        raise ShapeError("cell_step", "state shape", expected, state.hidden.shape)

    h = params.hidden
    z = conv2d(x, params.w_x, params.bias, params.input_spec)
    if not state.fresh:
        z = add(z, conv2d(state.hidden, params.w_h, None, params.hidden_spec))
    zi, zf, zo, zg = (channel_slice(z, k * h, (k + 1) * h) for k in range(4))

    if params.peephole is not None and not state.fresh:
        p_i, p_f, _ = params.peephole
        zi = add(zi, scale_channels(state.cell, p_i))
        zf = add(zf, scale_channels(state.cell, p_f))
    i, f, g = sigmoid(zi), sigmoid(zf), tanh(zg)

    c_new = mul(i, g) if state.fresh else add(mul(f, state.cell), mul(i, g))
    if params.peephole is not None:
        zo = add(zo, scale_channels(c_new, params.peephole[2]))
    o = sigmoid(zo)
    h_new = mul(o, tanh(c_new))
    return ConvLstmState(h_new, c_new)


def zero_state(x: Tensor, params: ConvLstmParams) -> ConvLstmState:
    ho, wo = output_size(params, x.shape[2], x.shape[3])
    return ConvLstmState.zeros(x.shape[0], params.hidden, ho, wo, dtype=x.dtype)


def layer_forward(x: Tensor, params: ConvLstmParams, steps: int) -> Tensor:
    """Feed ``x`` for ``steps`` updates from a zero state; return the final hidden state."""
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    state = zero_state(x, params)
    for _ in range(steps):
        state = cell_step(x, state, params)
    return state.hidden
