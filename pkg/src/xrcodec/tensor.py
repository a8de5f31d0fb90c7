"""Dense NCHW tensors and the differentiable primitives the codec is built from.

Every primitive is a pure function of its inputs. When a :class:`GradTape` is
active (``with GradTape() as tape:``) and at least one input requires a
gradient, the primitive appends a record to the tape; :func:`backward` replays
those records in reverse order.

Convolution uses the cross-correlation convention (the kernel is not
flipped), as in most deep-learning frameworks.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "ShapeError",
    "Tensor",
    "ConvSpec",
    "GradTape",
    "backward",
    "conv2d",
    "conv_output_size",
    "maxpool2x2",
    "depth_to_space",
    "space_to_depth",
    "activation",
    "relu",
    "sigmoid",
    "tanh",
    "elementwise_combine",
    "add",
    "sub",
    "mul",
    "average",
    "scale_channels",
    "channel_slice",
    "reduce_sum",
    "reduce_mean",
    "mean_abs_diff",
]


class ShapeError(ValueError):
    """Raised when tensor shapes violate an operation's contract."""

    def __init__(self, op: str, dim: str, expected, got):
        self.op = op
        self.dim = dim
        self.expected = expected
        self.got = got
        super().__init__(f"{op}: {dim} mismatch (expected {expected}, got {got})")


class Tensor:
    """A dense real array plus a flag saying whether gradients flow into it.

    Image-like values are rank 4 (batch, channels, height, width), row-major.
    Biases and peephole weights are rank-1 vectors.
    """

    __slots__ = ("data", "requires_grad", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind not in "fc":
            arr = arr.astype(np.float64)
        if any(d < 1 for d in arr.shape):
            raise ShapeError("Tensor", "dims", ">= 1", arr.shape)
        self.data = arr
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    @classmethod
    def zeros(cls, shape, dtype=np.float64) -> "Tensor":
        return cls(np.zeros(shape, dtype=dtype))

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label}, requires_grad={self.requires_grad})"


# --------------------------------------------------------------------------
# tape


@dataclass
class _Record:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


_local = threading.local()


def _active_tape() -> "GradTape | None":
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


class GradTape:
    """Ordered log of primitive calls, consumed once by :func:`backward`.

    A tape belongs to the thread that opened it; one training step builds and
    consumes one tape.
    """

    def __init__(self):
        self.records: list[_Record] = []
        self.visited: list[int] = []

    def __enter__(self) -> "GradTape":
        if not hasattr(_local, "stack"):
            _local.stack = []
        _local.stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _local.stack.pop()

    def __len__(self) -> int:
        return len(self.records)

    @property
    def ops(self) -> list[str]:
        return [r.op for r in self.records]


def _emit(op: str, inputs: tuple[Tensor, ...], out: np.ndarray, grad_fn) -> Tensor:
    needs = any(t.requires_grad for t in inputs)
    result = Tensor(out, requires_grad=needs)
    tape = _active_tape()
    if needs and tape is not None:
        tape.records.append(_Record(op, inputs, result, grad_fn))
    return result


def backward(tape: GradTape, loss: Tensor, params: Iterable[Tensor] | None = None):
    """Reverse-mode accumulation from a scalar ``loss``.

    Returns a dict mapping every leaf tensor that received gradient to its
    gradient array. When ``params`` is given, returns a list aligned with it
    instead, with zeros for parameters the loss does not depend on.
    """
    if loss.data.size != 1:
        raise ShapeError("backward", "loss size", 1, loss.shape)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    owners: dict[int, Tensor] = {id(loss): loss}
    tape.visited = []
    for idx in range(len(tape.records) - 1, -1, -1):
        rec = tape.records[idx]
        g = grads.pop(id(rec.output), None)
        owners.pop(id(rec.output), None)
        tape.visited.append(idx)
        if g is None:
            continue
        for inp, gi in zip(rec.inputs, rec.backward(g)):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
                owners[key] = inp
    leaf_grads = {owners[k]: v for k, v in grads.items()}
    if params is None:
        return leaf_grads
    by_id = {id(t): g for t, g in leaf_grads.items()}
    return [by_id.get(id(p), np.zeros_like(p.data)) for p in params]


# --------------------------------------------------------------------------
# convolution


@dataclass(frozen=True)
class ConvSpec:
    kernel_h: int
    kernel_w: int
    stride_h: int = 1
    stride_w: int = 1
    padding: str = "same"
    in_channels: int | None = None
    out_channels: int | None = None

    def __post_init__(self):
        if self.kernel_h < 1 or self.kernel_w < 1:
            raise ValueError(f"kernel dims must be >= 1, got {self.kernel_h}x{self.kernel_w}")
        if self.stride_h < 1 or self.stride_w < 1:
            raise ValueError(f"strides must be >= 1, got {self.stride_h}x{self.stride_w}")
        if self.padding not in ("same", "valid"):
            raise ValueError(f"padding must be 'same' or 'valid', got {self.padding!r}")

    @classmethod
    def square(cls, kernel: int, stride: int = 1, padding: str = "same", **kw) -> "ConvSpec":
        return cls(kernel, kernel, stride, stride, padding, **kw)


def conv_output_size(size: int, kernel: int, stride: int, padding: str) -> int:
    if padding == "same":
        return -(-size // stride)
    if size < kernel:
        raise ShapeError("conv2d", "spatial size", f">= kernel {kernel}", size)
    return (size - kernel) // stride + 1


def _pad_amounts(size: int, kernel: int, stride: int, padding: str) -> tuple[int, int]:
    if padding == "valid":
        return 0, 0
    out = -(-size // stride)
    total = max((out - 1) * stride + kernel - size, 0)
    # odd totals put the extra row/column at the bottom/right
    return total // 2, total - total // 2


def conv2d(x: Tensor, w: Tensor, b: Tensor | None, spec: ConvSpec) -> Tensor:
    """2-D cross-correlation of an NCHW input with an OIHW kernel."""
    if x.data.ndim != 4:
        raise ShapeError("conv2d", "input rank", 4, x.data.ndim)
    batch, cin, height, width = x.shape
    cout, wcin, kh, kw = w.shape
    if (kh, kw) != (spec.kernel_h, spec.kernel_w):
        raise ShapeError("conv2d", "kernel size", (spec.kernel_h, spec.kernel_w), (kh, kw))
    if wcin != cin:
        raise ShapeError("conv2d", "in_channels", wcin, cin)
    if spec.in_channels is not None and spec.in_channels != cin:
        raise ShapeError("conv2d", "in_channels", spec.in_channels, cin)
    if spec.out_channels is not None and spec.out_channels != cout:
        raise ShapeError("conv2d", "out_channels", spec.out_channels, cout)
    if b is not None and b.shape != (cout,):
        raise ShapeError("conv2d", "bias length", cout, b.shape)

    sh, sw = spec.stride_h, spec.stride_w
    ho = conv_output_size(height, kh, sh, spec.padding)
    wo = conv_output_size(width, kw, sw, spec.padding)
    pt, pb = _pad_amounts(height, kh, sh, spec.padding)
    pl, pr = _pad_amounts(width, kw, sw, spec.padding)

    pointwise = kh == 1 and kw == 1 and sh == 1 and sw == 1
    if pointwise:
        cols = x.data.reshape(batch, cin, height * width)
    else:
        xp = x.data
        if pt or pb or pl or pr:
            xp = np.pad(xp, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
        cols6 = np.empty((batch, cin, kh, kw, ho, wo), dtype=xp.dtype)
        for i in range(kh):
            for j in range(kw):
                cols6[:, :, i, j] = xp[:, :, i : i + sh * (ho - 1) + 1 : sh, j : j + sw * (wo - 1) + 1 : sw]
        cols = cols6.reshape(batch, cin * kh * kw, ho * wo)

    wmat = w.data.reshape(cout, cin * kh * kw)
    out = np.matmul(wmat, cols)
    if b is not None:
        out += b.data[None, :, None]
    out = out.reshape(batch, cout, ho, wo)

    def grad_fn(g: np.ndarray):
        g2 = g.reshape(batch, cout, ho * wo)
        gw = gb = gx = None
        if w.requires_grad:
            gw = np.matmul(g2, cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
        if b is not None and b.requires_grad:
            gb = g2.sum(axis=(0, 2))
        if x.requires_grad:
            gcols = np.matmul(wmat.T, g2)
            if pointwise:
                gx = gcols.reshape(x.shape)
            else:
                gcols = gcols.reshape(batch, cin, kh, kw, ho, wo)
                gxp = np.zeros((batch, cin, height + pt + pb, width + pl + pr), dtype=gcols.dtype)
                for i in range(kh):
                    for j in range(kw):
                        gxp[:, :, i : i + sh * (ho - 1) + 1 : sh, j : j + sw * (wo - 1) + 1 : sw] += gcols[:, :, i, j]
                gx = gxp[:, :, pt : pt + height, pl : pl + width]
        return gx, gw, gb

    inputs = (x, w) if b is None else (x, w, b)
    return _emit("conv2d", inputs, out, grad_fn)


# --------------------------------------------------------------------------
# pooling and rearrangement


def maxpool2x2(x: Tensor) -> Tensor:
    """Non-overlapping 2x2 max pooling. Ties route gradient to the first cell in row-major order."""
    if x.data.ndim != 4:
        raise ShapeError("maxpool2x2", "input rank", 4, x.data.ndim)
    b, c, h, w = x.shape
    if h % 2:
        raise ShapeError("maxpool2x2", "height", "even", h)
    if w % 2:
        raise ShapeError("maxpool2x2", "width", "even", w)
    blocks = x.data.reshape(b, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h // 2, w // 2, 4)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def grad_fn(g):
        gblocks = np.zeros(blocks.shape, dtype=g.dtype)
        np.put_along_axis(gblocks, arg[..., None], g[..., None], axis=-1)
        gx = gblocks.reshape(b, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h, w)
        return (gx,)

    return _emit("maxpool2x2", (x,), out, grad_fn)


def _d2s(a: np.ndarray, r: int) -> np.ndarray:
    b, c, h, w = a.shape
    return a.reshape(b, c // (r * r), r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(b, c // (r * r), h * r, w * r)


def _s2d(a: np.ndarray, r: int) -> np.ndarray:
    b, c, h, w = a.shape
    return a.reshape(b, c, h // r, r, w // r, r).transpose(0, 1, 3, 5, 2, 4).reshape(b, c * r * r, h // r, w // r)


def depth_to_space(x: Tensor, block: int = 2) -> Tensor:
    """Move channel blocks into space.

    Output pixel ``(y*block + dy, x*block + dx)`` of channel ``k`` reads input
    channel ``k*block**2 + dy*block + dx`` at ``(y, x)``.
    """
    if x.data.ndim != 4:
        raise ShapeError("depth_to_space", "input rank", 4, x.data.ndim)
    if block < 1:
        raise ValueError(f"block must be >= 1, got {block}")
    if x.shape[1] % (block * block):
        raise ShapeError("depth_to_space", "channels", f"multiple of {block * block}", x.shape[1])
    out = _d2s(x.data, block)
    return _emit("depth_to_space", (x,), out, lambda g: (_s2d(g, block),))


def space_to_depth(x: Tensor, block: int = 2) -> Tensor:
    """Exact inverse of :func:`depth_to_space`."""
    if x.data.ndim != 4:
        raise ShapeError("space_to_depth", "input rank", 4, x.data.ndim)
    if block < 1:
        raise ValueError(f"block must be >= 1, got {block}")
    if x.shape[2] % block:
        raise ShapeError("space_to_depth", "height", f"multiple of {block}", x.shape[2])
    if x.shape[3] % block:
        raise ShapeError("space_to_depth", "width", f"multiple of {block}", x.shape[3])
    out = _s2d(x.data, block)
    return _emit("space_to_depth", (x,), out, lambda g: (_d2s(g, block),))


# --------------------------------------------------------------------------
# elementwise


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _emit("relu", (x,), np.where(mask, x.data, 0).astype(x.dtype, copy=False), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    # exp of a non-positive argument only, so neither tail overflows
    e = np.exp(-np.abs(x.data))
    s = np.where(x.data >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype, copy=False)
    return _emit("sigmoid", (x,), s, lambda g: (g * s * (1.0 - s),))


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)
    return _emit("tanh", (x,), t, lambda g: (g * (1.0 - t * t),))


_ACTIVATIONS = {"relu": relu, "sigmoid": sigmoid, "tanh": tanh, "identity": lambda x: x}


def activation(x: Tensor, kind: str) -> Tensor:
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}") from None
    return fn(x)


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(op, "shape", a.shape, b.shape)


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    return _emit("add", (a, b), a.data + b.data, lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    return _emit("sub", (a, b), a.data - b.data, lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)
    ad, bd = a.data, b.data
    return _emit("mul", (a, b), ad * bd, lambda g: (g * bd, g * ad))


def average(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("average", a, b)
    return _emit("average", (a, b), (a.data + b.data) * 0.5, lambda g: (g * 0.5, g * 0.5))


def elementwise_combine(a: Tensor, b: Tensor, kind: str) -> Tensor:
    if kind == "add":
        return add(a, b)
    if kind == "average":
        return average(a, b)
    raise ValueError(f"unknown combine kind {kind!r}")


def scale_channels(x: Tensor, v: Tensor) -> Tensor:
    """Multiply channel ``k`` of an NCHW tensor by ``v[k]``."""
    if x.data.ndim != 4:
        raise ShapeError("scale_channels", "input rank", 4, x.data.ndim)
    if v.shape != (x.shape[1],):
        raise ShapeError("scale_channels", "vector length", x.shape[1], v.shape)
    vb = v.data[None, :, None, None]
    xd = x.data
    return _emit("scale_channels", (x, v), xd * vb, lambda g: (g * vb, (g * xd).sum(axis=(0, 2, 3))))


def channel_slice(x: Tensor, start: int, stop: int) -> Tensor:
    if x.data.ndim != 4:
        raise ShapeError("channel_slice", "input rank", 4, x.data.ndim)
    if not 0 <= start < stop <= x.shape[1]:
        raise ShapeError("channel_slice", "channel range", f"within [0, {x.shape[1]}]", (start, stop))
    shape = x.shape

    def grad_fn(g):
        gx = np.zeros(shape, dtype=g.dtype)
        gx[:, start:stop] = g
        return (gx,)

    return _emit("channel_slice", (x,), x.data[:, start:stop], grad_fn)


# --------------------------------------------------------------------------
# reductions (scalar results are 1x1x1x1)


def reduce_sum(x: Tensor) -> Tensor:
    shape = x.shape
    out = np.full((1, 1, 1, 1), x.data.sum(), dtype=x.dtype)
    return _emit("reduce_sum", (x,), out, lambda g: (np.full(shape, g.reshape(()), dtype=g.dtype),))


def reduce_mean(x: Tensor) -> Tensor:
    shape, n = x.shape, x.data.size
    out = np.full((1, 1, 1, 1), x.data.mean(), dtype=x.dtype)
    return _emit("reduce_mean", (x,), out, lambda g: (np.full(shape, g.reshape(()) / n, dtype=g.dtype),))


def mean_abs_diff(a: Tensor, b: Tensor) -> Tensor:
    """Mean of ``|a - b|``; the subgradient at zero difference is 0."""
    _same_shape("mean_abs_diff", a, b)
    diff = a.data - b.data
    n = diff.size
    out = np.full((1, 1, 1, 1), np.abs(diff).mean(), dtype=diff.dtype)

    def grad_fn(g):
        s = np.sign(diff) * (g.reshape(()) / n)
        return s, -s

    return _emit("mean_abs_diff", (a, b), out, grad_fn)
