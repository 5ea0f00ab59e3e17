"""Numpy-backed tensors with reverse-mode differentiation.

Only the primitives a DCGAN needs are provided: strided convolution and its
transpose (lowered to matrix products over sliding windows), batch norm,
dense layers, the four activations and the handful of reductions the losses
use. Every op checks its forward result for NaN/Inf.
"""

from __future__ import annotations

import contextlib
import itertools
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import NumericError, ShapeError

LOG_EPS = 1e-12
BN_EPS = 1e-5
BN_MOMENTUM = 0.9

_seq = itertools.count()
_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


class Node:
    """Record of one forward op: its kind, inputs and backward closure."""

    __slots__ = ("op", "inputs", "backward")

    def __init__(self, op: str, inputs: Sequence["Tensor"], backward: Callable):
        self.op = op
        self.inputs = tuple(inputs)
        self.backward = backward


class Tensor:
    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.node: Node | None = None
        self.seq = next(_seq)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        op = self.node.op if self.node else "leaf"
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={op})"

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate d(self)/d(leaf) into ``.grad`` of every leaf requiring grad.

        Nodes are visited in exact reverse order of their construction.
        """
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward() without a seed gradient needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        reachable: dict[int, Tensor] = {}
        stack = [self]
        while stack:
            t = stack.pop()
            if t.seq in reachable:
                continue
            reachable[t.seq] = t
            if t.node is not None:
                stack.extend(t.node.inputs)
        grads = {self.seq: np.asarray(grad, dtype=self.dtype)}
        for seq in sorted(reachable, reverse=True):
            t = reachable[seq]
            g = grads.pop(seq, None)
            if g is None:
                continue
            if t.node is None:
                if t.requires_grad:
                    t.grad = g.copy() if t.grad is None else t.grad + g
                continue
            for inp, ig in zip(t.node.inputs, t.node.backward(g)):
                if ig is None or not inp.requires_grad:
                    continue
                prev = grads.get(inp.seq)
                grads[inp.seq] = ig if prev is None else prev + ig

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other, self.dtype)))

    def __rsub__(self, other):
        return add(_as_tensor(other, self.dtype), neg(self))

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__


def _as_tensor(x, dtype=None) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=dtype))


def _check_finite(out: np.ndarray, op: str, seq: int) -> None:
    if not np.all(np.isfinite(out)):
        raise NumericError(f"non-finite output from {op} (op id {seq})")


def _make(out: np.ndarray, op: str, inputs: Iterable[Tensor], backward: Callable) -> Tensor:
    inputs = tuple(inputs)
    t = Tensor(out)
    _check_finite(t.data, op, t.seq)
    if _grad_enabled and any(i.requires_grad for i in inputs):
        t.requires_grad = True
        t.node = Node(op, inputs, backward)
    return t


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise and reductions


def add(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, a.dtype)
    out = a.data + b.data
    return _make(out, "add", (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, "neg", (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, a.dtype)
    out = a.data * b.data
    return _make(
        out,
        "mul",
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def mean(x: Tensor) -> Tensor:
    n = x.data.size
    out = np.asarray(x.data.mean(), dtype=x.dtype)
    return _make(out, "mean", (x,), lambda g: (np.full(x.shape, g / n, dtype=x.dtype),))


def sum_(x: Tensor) -> Tensor:
    out = np.asarray(x.data.sum(), dtype=x.dtype)
    return _make(out, "sum", (x,), lambda g: (np.full(x.shape, g, dtype=x.dtype),))


def log(x: Tensor, eps: float = LOG_EPS) -> Tensor:
    """Natural log with the input clamped from below at ``eps``.

    The gradient is zero wherever the clamp is active.
    """
    clamped = np.maximum(x.data, eps)
    out = np.log(clamped)

    def backward(g):
        return (np.where(x.data > eps, g / clamped, 0.0).astype(x.dtype),)

    return _make(out, "log", (x,), backward)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    out = x.data.reshape(tuple(shape))
    return _make(out, "reshape", (x,), lambda g: (g.reshape(x.shape),))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _make(x.data * mask, "relu", (x,), lambda g: (g * mask,))


def leaky_relu(x: Tensor, alpha: float = 0.2) -> Tensor:
    slope = np.where(x.data > 0, 1.0, alpha).astype(x.dtype)
    return _make(x.data * slope, "leaky_relu", (x,), lambda g: (g * slope,))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _make(y, "tanh", (x,), lambda g: (g * (1.0 - y * y),))


def sigmoid(x: Tensor) -> Tensor:
    """Logistic function, kept strictly inside (0, 1) at the working precision."""
    d = x.data
    e = np.exp(-np.abs(d))
    y = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype)
    tiny = np.finfo(x.dtype).eps
    y = np.clip(y, tiny, 1.0 - tiny)
    return _make(y, "sigmoid", (x,), lambda g: (g * y * (1.0 - y),))


def dense(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    if x.data.ndim != 2 or weight.data.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise ShapeError(f"dense: input {x.shape} does not match weight {weight.shape}")
    if bias.shape != (weight.shape[1],):
        raise ShapeError(f"dense: bias {bias.shape} does not match weight {weight.shape}")
    out = x.data @ weight.data + bias.data

    def backward(g):
        return g @ weight.data.T, x.data.T @ g, g.sum(axis=0)

    return _make(out, "dense", (x, weight, bias), backward)


# ---------------------------------------------------------------------------
# convolution


def conv_output_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def conv_transpose_output_size(size: int, k: int, stride: int, pad: int, out_pad: int = 0) -> int:
    return (size - 1) * stride - 2 * pad + k + out_pad


def matching_out_pad(size: int, k: int, stride: int, pad: int) -> int:
    """out_pad that makes conv_transpose undo the spatial shrink of conv2d on ``size``."""
    return (size + 2 * pad - k) % stride


def _windows(xp: np.ndarray, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    # N, C, Ho, Wo, k, k view over the padded input
    win = sliding_window_view(xp, (k, k), axis=(2, 3))
    return win[:, :, : stride * (ho - 1) + 1 : stride, : stride * (wo - 1) + 1 : stride]


def _conv_forward(x: np.ndarray, w: np.ndarray, stride: int, pad: int) -> np.ndarray:
    k = w.shape[2]
    ho = conv_output_size(x.shape[2], k, stride, pad)
    wo = conv_output_size(x.shape[3], k, stride, pad)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = _windows(xp, k, stride, ho, wo)
    y = np.tensordot(cols, w, axes=([1, 4, 5], [1, 2, 3]))
    return np.ascontiguousarray(y.transpose(0, 3, 1, 2))


def _conv_backward_data(gy: np.ndarray, w: np.ndarray, hw: tuple[int, int], stride: int, pad: int) -> np.ndarray:
    n, _, ho, wo = gy.shape
    cin, k = w.shape[1], w.shape[2]
    h, wd = hw
    gcol = np.tensordot(gy, w, axes=([1], [0]))  # N, Ho, Wo, Cin, k, k
    gcol = gcol.transpose(0, 3, 4, 5, 1, 2)  # N, Cin, k, k, Ho, Wo
    dxp = np.zeros((n, cin, h + 2 * pad, wd + 2 * pad), dtype=gy.dtype)
    for i in range(k):
        for j in range(k):
            dxp[:, :, i : i + stride * (ho - 1) + 1 : stride, j : j + stride * (wo - 1) + 1 : stride] += gcol[:, :, i, j]
    return np.ascontiguousarray(dxp[:, :, pad : pad + h, pad : pad + wd])


def _conv_backward_weight(x: np.ndarray, gy: np.ndarray, k: int, stride: int, pad: int) -> np.ndarray:
    ho, wo = gy.shape[2], gy.shape[3]
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = _windows(xp, k, stride, ho, wo)
    return np.tensordot(gy, cols, axes=([0, 2, 3], [0, 2, 3]))


def _check_conv_args(op, x, weight, bias, k_axis_in, stride, pad):
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise ShapeError(f"{op}: expected 4-d input and weight, got {x.shape} and {weight.shape}")
    k = weight.shape[2]
    if weight.shape[3] != k or k < 1:
        raise ShapeError(f"{op}: kernel must be square and non-empty, weight {weight.shape}")
    if stride < 1 or pad < 0:
        raise ShapeError(f"{op}: stride must be >= 1 and pad >= 0 (stride={stride}, pad={pad})")
    if x.shape[1] != weight.shape[k_axis_in]:
        raise ShapeError(f"{op}: input {x.shape} channel count does not match weight {weight.shape}")
    out_c = weight.shape[1 - k_axis_in]
    if bias is not None and bias.shape != (out_c,):
        raise ShapeError(f"{op}: bias {bias.shape} does not match weight {weight.shape}")
    return k


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation. ``weight`` is (Cout, Cin, k, k)."""
    k = _check_conv_args("conv2d", x, weight, bias, 1, stride, pad)
    h, w = x.shape[2], x.shape[3]
    if h + 2 * pad < k or w + 2 * pad < k:
        raise ShapeError(f"conv2d: padded input {x.shape} (pad={pad}) smaller than kernel {weight.shape}")
    out = _conv_forward(x.data, weight.data, stride, pad)
    if bias is not None:
        out += bias.data[None, :, None, None]

    def backward(g):
        gx = _conv_backward_data(g, weight.data, (h, w), stride, pad) if x.requires_grad else None
        gw = _conv_backward_weight(x.data, g, k, stride, pad) if weight.requires_grad else None
        gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
        return (gx, gw, gb) if bias is not None else (gx, gw)

    inputs = (x, weight, bias) if bias is not None else (x, weight)
    return _make(out, "conv2d", inputs, backward)


def conv_transpose2d(
    x: Tensor, weight: Tensor, bias: Tensor | None, stride: int = 1, pad: int = 0, out_pad: int = 0
) -> Tensor:
    """Fractionally-strided convolution. ``weight`` is (Cin, Cout, k, k).

    Forward equals the data-gradient of :func:`conv2d` with the same geometry.
    """
    k = _check_conv_args("conv_transpose2d", x, weight, bias, 0, stride, pad)
    if not 0 <= out_pad < stride:
        raise ShapeError(f"conv_transpose2d: out_pad must satisfy 0 <= out_pad < stride (out_pad={out_pad}, stride={stride})")
    h, w = x.shape[2], x.shape[3]
    ho = conv_transpose_output_size(h, k, stride, pad, out_pad)
    wo = conv_transpose_output_size(w, k, stride, pad, out_pad)
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv_transpose2d: input {x.shape} with weight {weight.shape} gives empty output")
    out = _conv_backward_data(x.data, weight.data, (ho, wo), stride, pad)
    if bias is not None:
        out += bias.data[None, :, None, None]

    def backward(g):
        gx = _conv_forward(g, weight.data, stride, pad) if x.requires_grad else None
        gw = _conv_backward_weight(g, x.data, k, stride, pad) if weight.requires_grad else None
        gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
        return (gx, gw, gb) if bias is not None else (gx, gw)

    inputs = (x, weight, bias) if bias is not None else (x, weight)
    return _make(out, "conv_transpose2d", inputs, backward)


# ---------------------------------------------------------------------------
# normalization


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    eps: float = BN_EPS,
    training: bool = True,
    running_mean: np.ndarray | None = None,
    running_var: np.ndarray | None = None,
    momentum: float = BN_MOMENTUM,
) -> Tensor:
    """Per-channel batch norm over (N, H, W) for 4-d input or N for 2-d input.

    In training mode the running statistics, when given, are updated in place:
    ``running = momentum * running + (1 - momentum) * batch``.
    """
    if x.data.ndim not in (2, 4):
        raise ShapeError(f"batch_norm: expected 2-d or 4-d input, got {x.shape}")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batch_norm: gamma {gamma.shape} / beta {beta.shape} do not match input {x.shape}")
    axes = (0, 2, 3) if x.data.ndim == 4 else (0,)
    bshape = (1, c, 1, 1) if x.data.ndim == 4 else (1, c)
    m = x.data.size // c

    if training:
        if m < 2:
            raise ShapeError(f"batch_norm: need at least 2 values per channel in training mode, input {x.shape}")
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        if running_mean is not None:
            running_mean *= momentum
            running_mean += (1.0 - momentum) * mu
        if running_var is not None:
            running_var *= momentum
            running_var += (1.0 - momentum) * var
    else:
        if running_mean is None or running_var is None:
            raise ShapeError("batch_norm: eval mode requires running statistics")
        mu, var = running_mean, running_var

    inv = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = (x.data - mu.reshape(bshape)) * inv.reshape(bshape)
    out = xhat * gamma.data.reshape(bshape) + beta.data.reshape(bshape)

    def backward(g):
        ggamma = (g * xhat).sum(axis=axes)
        gbeta = g.sum(axis=axes)
        dxhat = g * gamma.data.reshape(bshape)
        if training:
            gx = (inv.reshape(bshape) / m) * (
                m * dxhat
                - dxhat.sum(axis=axes).reshape(bshape)
                - xhat * (dxhat * xhat).sum(axis=axes).reshape(bshape)
            )
        else:
            gx = dxhat * inv.reshape(bshape)
        return gx, ggamma, gbeta

    return _make(out, "batch_norm", (x, gamma, beta), backward)
