"""
Radix-2 real FFT, its inverse, and the gradient rule for the forward transform.

All transforms act on the last axis and broadcast over leading axes, so a
``[batch, channels, n]`` block is transformed in one call.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

__all__ = ["Spectrum", "fft", "ifft", "rfft", "irfft", "rfft_backward"]


def _is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@lru_cache(maxsize=32)
def _bitrev(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.intp)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


@lru_cache(maxsize=128)
def _twiddles(m: int) -> np.ndarray:
    return np.exp(-2j * np.pi * np.arange(m // 2) / m)


def fft(x: np.ndarray) -> np.ndarray:
    """Forward complex DFT along the last axis (iterative decimation in time)."""
    x = np.asarray(x)
    n = x.shape[-1]
    if not _is_pow2(n):
        raise ValueError(f"FFT length must be a power of two, got {n}")
    lead = x.shape[:-1]
    a = x[..., _bitrev(n)].astype(np.complex128)
    m = 2
    while m <= n:
        half = m // 2
        a = a.reshape(*lead, n // m, m)
        even = a[..., :half]
        odd = a[..., half:] * _twiddles(m)
        a = np.concatenate([even + odd, even - odd], axis=-1)
        m *= 2
    return a.reshape(*lead, n)


def ifft(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X)
    return np.conj(fft(np.conj(X))) / X.shape[-1]


@dataclass
class Spectrum:
    """One-sided spectrum of a real signal: bins ``0 .. n_fft/2``."""

    n_fft: int
    bins: np.ndarray

    def __post_init__(self):
        if not _is_pow2(self.n_fft) or self.n_fft < 2:
            raise ValueError(f"n_fft must be a power of two >= 2, got {self.n_fft}")
        if self.bins.shape[-1] != self.n_fft // 2 + 1:
            raise ValueError(
                f"expected {self.n_fft // 2 + 1} bins for n_fft={self.n_fft}, got {self.bins.shape[-1]}"
            )


def rfft(signal: np.ndarray, n_fft: int | None = None) -> Spectrum:
    """One-sided DFT ``X_k = sum_n x_n exp(-2 pi i k n / N)`` for ``k <= N/2``."""
    signal = np.asarray(signal, dtype=np.float64)
    n = signal.shape[-1] if n_fft is None else n_fft
    if not _is_pow2(n) or n < 2:
        raise ValueError(f"n_fft must be a power of two >= 2, got {n}")
    if signal.shape[-1] != n:
        raise ValueError(f"signal length {signal.shape[-1]} != n_fft {n}")
    return Spectrum(n, fft(signal)[..., : n // 2 + 1])


def irfft(spectrum: Spectrum, atol: float = 1e-8) -> np.ndarray:
    """Inverse of :func:`rfft`; rejects spectra whose DC/Nyquist bins are not real."""
    X = spectrum.bins
    n = spectrum.n_fft
    edge = np.abs(X[..., [0, -1]].imag)
    scale = max(1.0, float(np.abs(X).max(initial=0.0)))
    if np.any(edge > atol * scale):
        raise ValueError("invalid one-sided layout: DC or Nyquist bin has an imaginary part")
    full = np.empty(X.shape[:-1] + (n,), dtype=np.complex128)
    full[..., : n // 2 + 1] = X
    full[..., n // 2 + 1 :] = np.conj(X[..., 1 : n // 2][..., ::-1])
    return ifft(full).real


def rfft_backward(upstream: np.ndarray, n_fft: int) -> np.ndarray:
    """Gradient of a real loss w.r.t. the input of :func:`rfft`.

    ``upstream[k] = dL/dRe(X_k) + 1j * dL/dIm(X_k)`` for the one-sided bins.
    Returns ``Re(sum_k upstream[k] exp(+2 pi i k n / N))``.
    """
    upstream = np.asarray(upstream, dtype=np.complex128)
    if upstream.shape[-1] != n_fft // 2 + 1:
        raise ValueError(f"upstream must have {n_fft // 2 + 1} bins, got {upstream.shape[-1]}")
    full = np.zeros(upstream.shape[:-1] + (n_fft,), dtype=np.complex128)
    full[..., : n_fft // 2 + 1] = upstream
    return np.conj(fft(np.conj(full))).real
