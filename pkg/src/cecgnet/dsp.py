"""
Classical signal processing around the network: Butterworth band-pass
design, zero-phase filtering, resampling, normalization and similarity
metrics.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import NamedTuple

import numpy as np
from scipy import signal as sps

__all__ = [
    "BiquadCascade",
    "butter_bandpass",
    "filtfilt",
    "bandpass",
    "resample",
    "minmax_normalize",
    "mse",
    "xcorr_max",
    "XcorrResult",
]


@dataclass
class BiquadCascade:
    """Second-order sections ``(b0, b1, b2, a1, a2)`` with ``a0 = 1``, plus overall gain."""

    sections: list[tuple[float, float, float, float, float]]
    gain: float

    def sos(self) -> np.ndarray:
        """scipy-style ``[n, 6]`` array with the gain folded into the first section."""
        out = np.array([[b0, b1, b2, 1.0, a1, a2] for b0, b1, b2, a1, a2 in self.sections])
        out[0, :3] *= self.gain
        return out

    def poles(self) -> np.ndarray:
        return np.concatenate([np.roots([1.0, a1, a2]) for *_, a1, a2 in self.sections])

    def is_stable(self) -> bool:
        return bool(np.all(np.abs(self.poles()) < 1.0))

    def response(self, freqs_hz, fs: float) -> np.ndarray:
        """Complex frequency response at ``freqs_hz``."""
        z = np.exp(1j * 2 * np.pi * np.asarray(freqs_hz, dtype=np.float64) / fs)
        zi = 1.0 / z
        h = np.full(z.shape, self.gain, dtype=np.complex128)
        for b0, b1, b2, a1, a2 in self.sections:
            h *= (b0 + b1 * zi + b2 * zi**2) / (1.0 + a1 * zi + a2 * zi**2)
        return h

    def group_delay(self, freq_hz: float, fs: float) -> float:
        """Group delay in samples at one frequency (central difference of the phase)."""
        w = 2 * np.pi * freq_hz / fs
        dw = 1e-6 * max(w, 1e-3)
        f_lo, f_hi = (w - dw) * fs / (2 * np.pi), (w + dw) * fs / (2 * np.pi)
        ph = np.unwrap(np.angle(self.response([f_lo, f_hi], fs)))
        return float(-(ph[1] - ph[0]) / (2 * dw))


def butter_bandpass(order: int, low_hz: float, high_hz: float, fs: float) -> BiquadCascade:
    """Digital Butterworth band-pass of prototype order ``order``.

    The analog low-pass prototype is shifted to a band-pass (doubling the
    pole count) and mapped through the bilinear transform with both band
    edges prewarped, so the single-pass response is exactly -3 dB at
    ``low_hz`` and ``high_hz``.
    """
    if order < 2 or order % 2:
        raise ValueError(f"order must be a positive even number, got {order}")
    if not 0 < low_hz < high_hz < fs / 2:
        raise ValueError(f"band edges must satisfy 0 < low < high < fs/2, got {low_hz}, {high_hz}, fs={fs}")

    # prewarped analog edges
    w1 = 2 * fs * np.tan(np.pi * low_hz / fs)
    w2 = 2 * fs * np.tan(np.pi * high_hz / fs)
    bw, w0sq = w2 - w1, w1 * w2

    k = np.arange(1, order + 1)
    proto = np.exp(1j * np.pi * (2 * k + order - 1) / (2 * order))
    half = proto * bw / 2
    root = np.sqrt(half**2 - w0sq + 0j)
    analog_poles = np.concatenate([half + root, half - root])
    # order zeros at s=0 and order at infinity; analog gain bw**order
    fs2 = 2 * fs
    digital_poles = (fs2 + analog_poles) / (fs2 - analog_poles)
    gain = float(np.real(bw**order * fs2**order / np.prod(fs2 - analog_poles)))

    # digital zeros: order at z=+1 and order at z=-1 -> each section numerator 1 - z^-2
    upper = digital_poles[digital_poles.imag > 1e-12]
    real = np.sort(digital_poles[np.abs(digital_poles.imag) <= 1e-12].real)
    sections = []
    for p in upper:
        sections.append((1.0, 0.0, -1.0, float(-2 * p.real), float(abs(p) ** 2)))
    for i in range(0, len(real), 2):
        p1, p2 = real[i], real[i + 1]
        sections.append((1.0, 0.0, -1.0, float(-(p1 + p2)), float(p1 * p2)))
    # spread the gain evenly to keep intermediate values balanced
    n = len(sections)
    g = abs(gain) ** (1.0 / n)
    sections = [(b0 * g, b1 * g, b2 * g, a1, a2) for b0, b1, b2, a1, a2 in sections]
    return BiquadCascade(sections, float(np.sign(gain)) or 1.0)


def _edge_padlen(cascade: BiquadCascade) -> int:
    # 3x the largest group delay (samples), probed at the pole angles
    angles = np.abs(np.angle(cascade.poles())) / (2 * np.pi)
    delay = max(abs(cascade.group_delay(f, 1.0)) for f in angles if 0 < f < 0.5)
    return int(np.ceil(3 * delay))


def filtfilt(cascade: BiquadCascade, x, padlen: int | None = None) -> np.ndarray:
    """Zero-phase forward-backward filtering.

    The signal is mirror-extended by ``padlen`` samples at each end (default:
    three times the cascade's peak group delay) and each pass starts from the
    steady state for its first sample.  Mirroring, unlike odd reflection,
    keeps the DC level continuous, which matters for the slow high-pass edge.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("filtfilt expects a 1-D signal")
    if padlen is None:
        padlen = max(_edge_padlen(cascade), 3 * (2 * len(cascade.sections) + 1))
    if x.size <= padlen:
        raise ValueError(f"signal of length {x.size} too short for edge padding of {padlen} samples")
    if not np.any(x):
        return np.zeros_like(x)
    ext = np.concatenate([x[padlen:0:-1], x, x[-2 : -padlen - 2 : -1]])
    sos = cascade.sos()
    zi = sps.sosfilt_zi(sos)
    y, _ = sps.sosfilt(sos, ext, zi=zi * ext[0])
    y = y[::-1]
    y, _ = sps.sosfilt(sos, y, zi=zi * y[0])
    y = y[::-1]
    return y[padlen:-padlen]


def bandpass(x, fs: float, low_hz: float = 0.5, high_hz: float = 60.0, order: int = 4) -> np.ndarray:
    """Convenience: design and apply the evaluation band-pass in one call."""
    return filtfilt(butter_bandpass(order, low_hz, high_hz, fs), x)


def resample(x, fs_in: float, fs_out: float) -> np.ndarray:
    """Polyphase windowed-sinc resampling to ``round(len * fs_out / fs_in)`` samples."""
    if fs_in <= 0 or fs_out <= 0:
        raise ValueError("sampling rates must be positive")
    x = np.asarray(x, dtype=np.float64)
    if fs_in == fs_out:
        return x.copy()
    ratio = Fraction(fs_out / fs_in).limit_denominator(10_000)
    y = sps.resample_poly(x, ratio.numerator, ratio.denominator, axis=-1)
    n_out = int(round(x.shape[-1] * fs_out / fs_in))
    if y.shape[-1] >= n_out:
        return y[..., :n_out]
    return np.pad(y, [(0, 0)] * (y.ndim - 1) + [(0, n_out - y.shape[-1])], mode="edge")


def minmax_normalize(x) -> np.ndarray:
    """Affine map onto ``[0, 1]``; a constant signal maps to zeros."""
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise ValueError("cannot normalize an empty signal")
    lo, hi = x.min(), x.max()
    if hi == lo:
        return np.zeros_like(x)
    return (x - lo) / (hi - lo)


def mse(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


class XcorrResult(NamedTuple):
    coefficient: float
    lag: int
    degenerate: bool = False


def xcorr_max(a, b, max_lag: int) -> XcorrResult:
    """Best Pearson correlation between ``a[n]`` and ``b[n + lag]``, ``|lag| <= max_lag``.

    Each lag uses only the overlapping samples.  Ties go to the smallest
    ``|lag|`` (then the negative one).  If either input has no variance the
    coefficient is 0 and ``degenerate`` is set.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"xcorr_max needs equal-length 1-D inputs, got {a.shape} and {b.shape}")
    n = a.size
    if not 0 <= max_lag < n:
        raise ValueError(f"max_lag must be in [0, {n - 1}]")
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        return XcorrResult(0.0, 0, True)
    # centring first keeps the running-sum formula well conditioned
    a = a - a.mean()
    b = b - b.mean()
    lags = np.arange(-max_lag, max_lag + 1)
    full = sps.correlate(b, a, mode="full", method="auto")  # index n-1+lag -> sum a[i] b[i+lag]
    sab = full[n - 1 + lags]
    ca = np.concatenate([[0.0], np.cumsum(a)])
    ca2 = np.concatenate([[0.0], np.cumsum(a * a)])
    cb = np.concatenate([[0.0], np.cumsum(b)])
    cb2 = np.concatenate([[0.0], np.cumsum(b * b)])
    pos = np.maximum(lags, 0)
    neg = np.maximum(-lags, 0)
    m = n - np.abs(lags)
    # lag >= 0: a[0:n-lag], b[lag:n];  lag < 0: a[-lag:n], b[0:n+lag]
    a_lo, a_hi = neg, n - pos
    b_lo, b_hi = pos, n - neg
    sa, saa = ca[a_hi] - ca[a_lo], ca2[a_hi] - ca2[a_lo]
    sb, sbb = cb[b_hi] - cb[b_lo], cb2[b_hi] - cb2[b_lo]
    cov = sab - sa * sb / m
    va = np.maximum(saa - sa * sa / m, 0.0)
    vb = np.maximum(sbb - sb * sb / m, 0.0)
    denom = np.sqrt(va * vb)
    scale = np.sqrt(np.sum(a * a) * np.sum(b * b))
    ok = denom > 1e-12 * scale
    r = np.where(ok, cov / np.where(ok, denom, 1.0), -np.inf)
    if not np.any(ok):
        return XcorrResult(0.0, 0, True)
    r = np.clip(r, -1.0, 1.0)
    best = r.max()
    cand = np.flatnonzero(r >= best - 1e-12)
    pick = cand[np.lexsort((lags[cand], np.abs(lags[cand])))[0]]
    return XcorrResult(float(r[pick]), int(lags[pick]), False)
