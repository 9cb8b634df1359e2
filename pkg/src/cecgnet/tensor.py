"""
Batched 1D tensors with tape-based reverse-mode differentiation.

A :class:`Tensor` wraps a float64 array laid out as ``[batch, channels,
length]`` (scalars and parameter vectors are also allowed).  Operations
executed while a :class:`Tape` is active are recorded on it; calling
:meth:`Tape.backward` replays the recorded nodes in reverse order and
accumulates gradients into every tensor created with ``requires_grad``.

Outside an active tape the operations are plain numpy computations, which
is what inference uses.

>>> x = Tensor(np.ones((1, 1, 4)), requires_grad=True)
>>> with Tape() as tape:
...     loss = tsum(x)
>>> grads = tape.backward(loss)
>>> x.grad.tolist()
[[[1.0, 1.0, 1.0, 1.0]]]
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "ConvSpec",
    "ShapeError",
    "NonFiniteError",
    "conv1d",
    "conv1d_transpose",
    "conv_output_length",
    "conv_transpose_output_length",
    "batchnorm1d",
    "BatchNormState",
    "leaky_relu",
    "dropout",
    "concat_channels",
    "add",
    "sub",
    "scale",
    "tsum",
    "active_tape",
]


class ShapeError(ValueError):
    """Raised when tensor shapes are incompatible for an operation."""


class NonFiniteError(FloatingPointError):
    """Raised when an operation receives or produces NaN/Inf."""


_ids = itertools.count()


class Tensor:
    """Float64 array with an optional gradient slot."""

    __slots__ = ("values", "requires_grad", "grad", "name", "id")

    def __init__(self, values, requires_grad: bool = False, name: str | None = None):
        self.values = np.asarray(values, dtype=np.float64, order="C")
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.values) if requires_grad else None
        self.name = name
        self.id = next(_ids)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def batch(self) -> int:
        return self.values.shape[0]

    @property
    def channels(self) -> int:
        return self.values.shape[1]

    @property
    def length(self) -> int:
        return self.values.shape[2]

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.values)

    def numpy(self) -> np.ndarray:
        return self.values

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"


@dataclass
class _Node:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


_tape_stack: list["Tape"] = []


def active_tape() -> "Tape | None":
    return _tape_stack[-1] if _tape_stack else None


@dataclass
class Tape:
    """Ordered record of differentiable operations.

    Use as a context manager; nested tapes are allowed, and only the
    innermost one records.
    """

    nodes: list[_Node] = field(default_factory=list)

    def __enter__(self) -> "Tape":
        _tape_stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _tape_stack.remove(self)

    def record(self, op, inputs, output, backward) -> None:
        self.nodes.append(_Node(op, tuple(inputs), output, backward))

    def backward(self, loss: Tensor) -> dict[int, np.ndarray]:
        """Backpropagate from a scalar ``loss``.

        Gradients are accumulated (added) into ``.grad`` of every leaf with
        ``requires_grad``; the returned mapping is ``tensor.id -> grad`` for
        those leaves.
        """
        if loss.values.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        upstream: dict[int, np.ndarray] = {loss.id: np.ones_like(loss.values)}
        leaves: dict[int, Tensor] = {}
        for node in reversed(self.nodes):
            g = upstream.pop(node.output.id, None)
            if g is None:
                continue
            in_grads = node.backward(g)
            for t, gi in zip(node.inputs, in_grads):
                if gi is None:
                    continue
                if t.id in upstream:
                    upstream[t.id] = upstream[t.id] + gi
                else:
                    upstream[t.id] = gi
                if t.requires_grad:
                    leaves[t.id] = t
        out = {}
        for tid, t in leaves.items():
            g = upstream.get(tid)
            if g is None:
                continue
            t.grad = t.grad + g if t.grad is not None else g.copy()
            out[tid] = g
        return out


def _record(op: str, inputs, out_values: np.ndarray, backward) -> Tensor:
    out = Tensor(out_values)
    tape = active_tape()
    if tape is not None:
        tape.record(op, inputs, out, backward)
    return out


def _check_finite(x: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"{what}: non-finite values")


def _check_3d(t: Tensor, what: str) -> None:
    if t.values.ndim != 3:
        raise ShapeError(f"{what}: expected [batch, channels, length], got shape {t.shape}")


# ---------------------------------------------------------------------------
# convolution


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel_size: int
    stride: int = 1
    dilation: int = 1
    padding: int = 0

    def __post_init__(self):
        if self.kernel_size < 1 or self.stride < 1 or self.dilation < 1 or self.padding < 0:
            raise ValueError(f"invalid ConvSpec {self}")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError(f"invalid ConvSpec {self}")

    @property
    def extent(self) -> int:
        return (self.kernel_size - 1) * self.dilation + 1


def conv_output_length(length: int, spec: ConvSpec) -> int:
    return (length + 2 * spec.padding - spec.extent) // spec.stride + 1


def conv_transpose_output_length(length: int, spec: ConvSpec) -> int:
    return (length - 1) * spec.stride - 2 * spec.padding + spec.extent


def _taps(j: int, spec: ConvSpec, n_out: int) -> slice:
    start = j * spec.dilation
    return slice(start, start + spec.stride * (n_out - 1) + 1, spec.stride)


def conv1d(x: Tensor, weight: Tensor, bias: Tensor | None, spec: ConvSpec) -> Tensor:
    """Cross-correlation of ``x`` ([b, in, L]) with ``weight`` ([out, in, k])."""
    _check_3d(x, "conv1d input")
    if x.channels != spec.in_channels:
        raise ShapeError(f"conv1d: input channels {x.channels} != spec.in_channels {spec.in_channels}")
    if weight.shape != (spec.out_channels, spec.in_channels, spec.kernel_size):
        raise ShapeError(
            f"conv1d: weight shape {weight.shape} != "
            f"{(spec.out_channels, spec.in_channels, spec.kernel_size)}"
        )
    if bias is not None and bias.shape != (spec.out_channels,):
        raise ShapeError(f"conv1d: bias shape {bias.shape} != ({spec.out_channels},)")
    padded_len = x.length + 2 * spec.padding
    if spec.extent > padded_len:
        raise ShapeError(f"conv1d: kernel extent {spec.extent} exceeds padded length {padded_len}")
    _check_finite(x.values, "conv1d input")

    p = spec.padding
    xp = np.pad(x.values, ((0, 0), (0, 0), (p, p))) if p else x.values
    n_out = conv_output_length(x.length, spec)
    w = weight.values
    # cols[b, i, k, l] = xp[b, i, l*stride + k*dilation]
    cols = np.stack([xp[:, :, _taps(j, spec, n_out)] for j in range(spec.kernel_size)], axis=2)
    y = np.einsum("bikl,oik->bol", cols, w, optimize=True)
    if bias is not None:
        y += bias.values[None, :, None]

    def backward(g):
        gw = np.einsum("bol,bikl->oik", g, cols, optimize=True)
        gb = g.sum(axis=(0, 2)) if bias is not None else None
        gcols = np.einsum("bol,oik->bikl", g, w, optimize=True)
        gxp = np.zeros_like(xp)
        for j in range(spec.kernel_size):
            gxp[:, :, _taps(j, spec, n_out)] += gcols[:, :, j, :]
        gx = gxp[:, :, p : p + x.length] if p else gxp
        return gx, gw, gb

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _record("conv1d", inputs, y, backward)


def conv1d_transpose(x: Tensor, weight: Tensor, bias: Tensor | None, spec: ConvSpec) -> Tensor:
    """Transposed convolution; ``weight`` is ``[in, out, k]``.

    With the same weight array and spec (channels swapped), this is the
    exact adjoint of :func:`conv1d`.
    """
    _check_3d(x, "conv1d_transpose input")
    if x.channels != spec.in_channels:
        raise ShapeError(
            f"conv1d_transpose: input channels {x.channels} != spec.in_channels {spec.in_channels}"
        )
    if weight.shape != (spec.in_channels, spec.out_channels, spec.kernel_size):
        raise ShapeError(
            f"conv1d_transpose: weight shape {weight.shape} != "
            f"{(spec.in_channels, spec.out_channels, spec.kernel_size)}"
        )
    if bias is not None and bias.shape != (spec.out_channels,):
        raise ShapeError(f"conv1d_transpose: bias shape {bias.shape} != ({spec.out_channels},)")
    n_out = conv_transpose_output_length(x.length, spec)
    if n_out < 1:
        raise ShapeError(f"conv1d_transpose: output length {n_out} < 1")
    _check_finite(x.values, "conv1d_transpose input")

    L, p = x.length, spec.padding
    full_len = (L - 1) * spec.stride + spec.extent
    w = weight.values
    # contrib[b, o, k, l] = sum_i x[b, i, l] w[i, o, k]
    contrib = np.einsum("bil,iok->bokl", x.values, w, optimize=True)
    full = np.zeros((x.batch, spec.out_channels, full_len))
    for j in range(spec.kernel_size):
        full[:, :, _taps(j, spec, L)] += contrib[:, :, j, :]
    y = full[:, :, p : p + n_out].copy()
    if bias is not None:
        y += bias.values[None, :, None]

    def backward(g):
        gfull = np.zeros((x.batch, spec.out_channels, full_len))
        gfull[:, :, p : p + n_out] = g
        gcontrib = np.stack([gfull[:, :, _taps(j, spec, L)] for j in range(spec.kernel_size)], axis=2)
        gx = np.einsum("bokl,iok->bil", gcontrib, w, optimize=True)
        gw = np.einsum("bil,bokl->iok", x.values, gcontrib, optimize=True)
        gb = g.sum(axis=(0, 2)) if bias is not None else None
        return gx, gw, gb

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _record("conv1d_transpose", inputs, y, backward)


# ---------------------------------------------------------------------------
# normalization and activations


@dataclass
class BatchNormState:
    """Running per-channel statistics."""

    running_mean: np.ndarray
    running_var: np.ndarray

    @classmethod
    def fresh(cls, channels: int) -> "BatchNormState":
        return cls(np.zeros(channels), np.ones(channels))


def batchnorm1d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    state: BatchNormState,
    training: bool,
    eps: float = 1e-5,
    momentum: float = 0.1,
) -> Tensor:
    """Per-channel normalization over batch and length, then affine.

    In training mode the batch statistics are used and ``state`` is updated
    in place (unbiased variance for the running estimate).
    """
    _check_3d(x, "batchnorm1d input")
    c = x.channels
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batchnorm1d: gamma/beta must have shape ({c},)")
    if eps <= 0:
        raise ValueError("batchnorm1d: eps must be positive")
    _check_finite(x.values, "batchnorm1d input")

    xv = x.values
    if training:
        mean = xv.mean(axis=(0, 2))
        var = xv.var(axis=(0, 2))
        n = xv.shape[0] * xv.shape[2]
        unbiased = var * n / (n - 1) if n > 1 else var
        state.running_mean = (1 - momentum) * state.running_mean + momentum * mean
        state.running_var = (1 - momentum) * state.running_var + momentum * unbiased
    else:
        mean, var = state.running_mean, state.running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (xv - mean[None, :, None]) * inv_std[None, :, None]
    y = gamma.values[None, :, None] * xhat + beta.values[None, :, None]

    def backward(g):
        ggamma = (g * xhat).sum(axis=(0, 2))
        gbeta = g.sum(axis=(0, 2))
        gxhat = g * gamma.values[None, :, None]
        if training:
            m = xv.shape[0] * xv.shape[2]
            gx = (
                inv_std[None, :, None]
                / m
                * (
                    m * gxhat
                    - gxhat.sum(axis=(0, 2), keepdims=True)
                    - xhat * (gxhat * xhat).sum(axis=(0, 2), keepdims=True)
                )
            )
        else:
            gx = gxhat * inv_std[None, :, None]
        return gx, ggamma, gbeta

    return _record("batchnorm1d", (x, gamma, beta), y, backward)


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    xv = x.values
    pos = xv >= 0
    y = np.where(pos, xv, slope * xv)

    def backward(g):
        return (np.where(pos, g, slope * g),)

    return _record("leaky_relu", (x,), y, backward)


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout: survivors are scaled by ``1 / (1 - rate)``."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs a seeded generator")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    y = x.values * mask

    def backward(g):
        return (g * mask,)

    return _record("dropout", (x,), y, backward)


# ---------------------------------------------------------------------------
# structural / elementwise


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    _check_3d(a, "concat_channels a")
    _check_3d(b, "concat_channels b")
    if a.batch != b.batch:
        raise ShapeError(f"concat_channels: batch {a.batch} != {b.batch}")
    if a.length != b.length:
        raise ShapeError(f"concat_channels: length {a.length} != {b.length}")
    ca = a.channels
    y = np.concatenate([a.values, b.values], axis=1)

    def backward(g):
        return g[:, :ca], g[:, ca:]

    return _record("concat_channels", (a, b), y, backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add: shape {a.shape} != {b.shape}")

    def backward(g):
        return g, g

    return _record("add", (a, b), a.values + b.values, backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"sub: shape {a.shape} != {b.shape}")

    def backward(g):
        return g, -g

    return _record("sub", (a, b), a.values - b.values, backward)


def scale(a: Tensor, c: float) -> Tensor:
    def backward(g):
        return (g * c,)

    return _record("scale", (a,), a.values * c, backward)


def tsum(a: Tensor) -> Tensor:
    shape = a.shape

    def backward(g):
        return (np.broadcast_to(g, shape).copy(),)

    return _record("sum", (a,), np.asarray(a.values.sum()), backward)
