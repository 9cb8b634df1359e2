"""
Joint signal/frequency SmoothL1 objective.

``total = alpha * signal_loss + beta * frequency_loss`` where both terms are
mean-reduced SmoothL1 penalties: the first on the raw residual, the second
on the residual between one-sided spectra of the prediction and target.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Literal

import numpy as np

from .spectral import fft, rfft_backward
from .tensor import ShapeError, Tensor, _record, add, scale, sub

__all__ = [
    "LossConfig",
    "LossReport",
    "smooth_l1",
    "smooth_l1_mean",
    "rfft_segments",
    "signal_loss",
    "frequency_loss",
    "total_loss",
]

FFTPolicy = Literal["two_halves", "first_half", "decimate"]


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 1.0
    beta: float = 1.0
    smooth_l1_threshold: float = 1.0
    n_fft: int = 1024
    fft_window_policy: FFTPolicy = "two_halves"

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be non-negative")
        if self.alpha == 0 and self.beta == 0:
            raise ValueError("alpha and beta cannot both be zero")
        if self.smooth_l1_threshold <= 0:
            raise ValueError("smooth_l1_threshold must be positive")
        if self.fft_window_policy not in ("two_halves", "first_half", "decimate"):
            raise ValueError(f"unknown fft_window_policy {self.fft_window_policy!r}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class LossReport:
    l_signal: float
    l_frequency: float
    l_total: float


def _smooth_l1_terms(d: np.ndarray, threshold: float) -> np.ndarray:
    ad = np.abs(d)
    return np.where(ad < threshold, 0.5 * d * d / threshold, ad - 0.5 * threshold)


def smooth_l1(diff, threshold: float = 1.0) -> float:
    """Mean SmoothL1 penalty of ``diff``.

    Quadratic (``0.5 d^2 / threshold``) inside ``|d| < threshold`` and linear
    (``|d| - threshold / 2``) outside; at the default unit threshold this is
    the familiar ``0.5 d^2`` / ``|d| - 0.5`` pair.
    """
    d = np.asarray(diff, dtype=np.float64)
    if d.size == 0:
        raise ValueError("smooth_l1 of an empty array")
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    return float(_smooth_l1_terms(d, threshold).mean())


def smooth_l1_mean(diff: Tensor, threshold: float = 1.0) -> Tensor:
    """Differentiable mean SmoothL1 over every element of ``diff``."""
    d = diff.values
    if d.size == 0:
        raise ValueError("smooth_l1 of an empty tensor")
    value = _smooth_l1_terms(d, threshold).mean()
    n = d.size

    def backward(g):
        slope = np.clip(d / threshold, -1.0, 1.0)
        return (g * slope / n,)

    return _record("smooth_l1_mean", (diff,), np.asarray(value), backward)


def _segment(x: np.ndarray, n_fft: int, policy: str) -> np.ndarray:
    L = x.shape[-1]
    if policy == "two_halves":
        if L % n_fft:
            raise ShapeError(f"length {L} is not a multiple of n_fft {n_fft}")
        return x.reshape(*x.shape[:-1], L // n_fft, n_fft)
    if policy == "first_half":
        if L < n_fft:
            raise ShapeError(f"length {L} shorter than n_fft {n_fft}")
        return x[..., None, :n_fft]
    if policy == "decimate":
        if L % n_fft:
            raise ShapeError(f"length {L} is not a multiple of n_fft {n_fft}")
        return x[..., None, :: L // n_fft]
    raise ValueError(f"unknown fft_window_policy {policy!r}")


def rfft_segments(x: Tensor, n_fft: int, policy: str = "two_halves") -> Tensor:
    """Differentiable one-sided spectra of ``x`` split per ``policy``.

    Output shape is ``[..., segments, 2, n_fft // 2 + 1]`` holding the real
    and imaginary parts.
    """
    xv = x.values
    L = xv.shape[-1]
    seg = _segment(xv, n_fft, policy)
    nb = n_fft // 2 + 1
    X = fft(seg)[..., :nb]
    y = np.stack([X.real, X.imag], axis=-2)

    def backward(g):
        gseg = rfft_backward(g[..., 0, :] + 1j * g[..., 1, :], n_fft)
        gx = np.zeros_like(xv)
        if policy == "two_halves":
            gx[...] = gseg.reshape(xv.shape)
        elif policy == "first_half":
            gx[..., :n_fft] = gseg[..., 0, :]
        else:
            gx[..., :: L // n_fft] = gseg[..., 0, :]
        return (gx,)

    return _record("rfft_segments", (x,), y, backward)


def _check_pair(pred: Tensor, target: Tensor) -> None:
    if pred.shape != target.shape:
        raise ShapeError(f"prediction shape {pred.shape} != target shape {target.shape}")


def signal_loss(pred: Tensor, target: Tensor, threshold: float = 1.0) -> Tensor:
    _check_pair(pred, target)
    return smooth_l1_mean(sub(target, pred), threshold)


def frequency_loss(pred: Tensor, target: Tensor, cfg: LossConfig = LossConfig()) -> Tensor:
    _check_pair(pred, target)
    Yp = rfft_segments(pred, cfg.n_fft, cfg.fft_window_policy)
    Yt = rfft_segments(target, cfg.n_fft, cfg.fft_window_policy)
    return smooth_l1_mean(sub(Yt, Yp), cfg.smooth_l1_threshold)


def total_loss(pred: Tensor, target: Tensor, cfg: LossConfig = LossConfig()) -> tuple[Tensor, LossReport]:
    ls = signal_loss(pred, target, cfg.smooth_l1_threshold)
    lf = frequency_loss(pred, target, cfg)
    total = add(scale(ls, cfg.alpha), scale(lf, cfg.beta))
    report = LossReport(float(ls.values), float(lf.values), float(total.values))
    return total, report
