"""
Hamilton-style QRS detection and heart-rate-variability metrics.
"""

from __future__ import annotations

import warnings
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal as sps
from scipy.interpolate import CubicSpline

from .dsp import xcorr_max

__all__ = [
    "PeakAnnotations",
    "HrvReport",
    "HrvWarning",
    "hamilton_detect",
    "rr_intervals",
    "time_domain_hrv",
    "lf_hf_ratio",
    "hrv_report",
    "rpeak_xcorr",
    "write_annotations",
    "read_annotations",
]

REFRACTORY_S = 0.200
ENVELOPE_S = 0.080
REFINE_S = 0.040
THRESHOLD_COEF = 0.3125
SEARCHBACK_RR = 1.5
BUFFER_LEN = 8


@dataclass
class PeakAnnotations:
    """Ascending R-peak sample indices at sampling rate ``fs``."""

    indices: np.ndarray
    fs: float
    flags: set[str] = field(default_factory=set)

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)
        if self.indices.size > 1 and np.any(np.diff(self.indices) <= 0):
            raise ValueError("peak indices must be strictly increasing")

    def __len__(self) -> int:
        return int(self.indices.size)

    @property
    def times(self) -> np.ndarray:
        return self.indices / self.fs


@dataclass
class HrvReport:
    mean_rr_s: float
    rmssd_s: float
    pnn50_pct: float
    lf_hf: float
    flags: set[str] = field(default_factory=set)


def hamilton_detect(ecg, fs: float) -> PeakAnnotations:
    """Detect R peaks in a band-passed ECG.

    Envelope: first difference, rectified, averaged over 80 ms.  Each local
    maximum of the envelope is classified against an adaptive threshold
    ``noise + 0.3125 * (qrs - noise)`` built from the means of the last
    eight QRS and eight noise peak heights.  Peaks inside the 200 ms
    refractory period are ignored.  If no beat is found for 1.5 mean RR
    intervals, the largest noise peak in the gap that clears half the
    threshold is promoted (search-back).  Detected positions are refined to
    the largest absolute sample of ``ecg`` within +-40 ms.

    All decisions are ratios of envelope heights, so scaling the input by a
    positive constant does not change the result.
    """
    x = np.asarray(ecg, dtype=np.float64)
    if fs < 100:
        raise ValueError(f"sampling rate {fs} Hz too low for QRS detection (need >= 100 Hz)")
    if x.size < 2 * fs:
        return PeakAnnotations(np.zeros(0, dtype=np.int64), fs, {"too_short"})

    refractory = int(round(REFRACTORY_S * fs))
    win = max(1, int(round(ENVELOPE_S * fs)))
    deriv = np.abs(np.diff(x, prepend=x[0]))
    env = np.convolve(deriv, np.ones(win) / win, mode="full")[: x.size]
    # the causal average lags the QRS by about half a window
    lag = win // 2

    cand, _ = sps.find_peaks(env)
    if cand.size == 0 or env.max() <= 0:
        return PeakAnnotations(np.zeros(0, dtype=np.int64), fs)

    # seed the QRS buffer with per-second envelope maxima of the first 8 s
    sec = int(fs)
    n_init = min(BUFFER_LEN, x.size // sec)
    qrs_buf = deque((env[i * sec : (i + 1) * sec].max() for i in range(n_init)), maxlen=BUFFER_LEN)
    noise_buf: deque[float] = deque([0.0] * BUFFER_LEN, maxlen=BUFFER_LEN)
    rr_buf: deque[int] = deque(maxlen=BUFFER_LEN)

    def threshold() -> float:
        q, n = np.mean(qrs_buf), np.mean(noise_buf)
        return n + THRESHOLD_COEF * (q - n)

    beats: list[int] = []
    noise_peaks: list[int] = []

    def accept(p: int) -> None:
        if beats:
            rr_buf.append(p - beats[-1])
        beats.append(p)
        qrs_buf.append(env[p])

    for p in cand:
        p = int(p)
        if beats and p - beats[-1] < refractory:
            continue
        # search-back over the gap preceding this candidate
        if beats and rr_buf:
            mean_rr = np.mean(rr_buf)
            if p - beats[-1] > SEARCHBACK_RR * mean_rr:
                gap = [q for q in noise_peaks if q - beats[-1] >= refractory and p - q >= refractory]
                if gap:
                    best = max(gap, key=lambda q: env[q])
                    if env[best] > 0.5 * threshold():
                        accept(best)
                        noise_peaks = [q for q in noise_peaks if q > best]
        if env[p] > threshold() and (not beats or p - beats[-1] >= refractory):
            accept(p)
            noise_peaks.clear()
        else:
            noise_buf.append(env[p])
            noise_peaks.append(p)

    # refine envelope peaks onto the signal
    half = int(round(REFINE_S * fs))
    refined: list[int] = []
    for b in beats:
        centre = max(0, b - lag)
        lo, hi = max(0, centre - half), min(x.size, centre + half + 1)
        r = lo + int(np.argmax(np.abs(x[lo:hi])))
        if refined and r - refined[-1] < refractory:
            if abs(x[r]) > abs(x[refined[-1]]):
                refined[-1] = r
            continue
        refined.append(r)
    return PeakAnnotations(np.asarray(refined, dtype=np.int64), fs)


def rr_intervals(peaks: PeakAnnotations) -> np.ndarray:
    if len(peaks) < 2:
        raise ValueError("need at least two peaks for RR intervals")
    return np.diff(peaks.indices) / peaks.fs


def time_domain_hrv(rr) -> tuple[float, float, float]:
    """``(mean_rr_s, rmssd_s, pnn50_pct)`` for an RR series in seconds."""
    rr = np.asarray(rr, dtype=np.float64)
    if rr.size < 2:
        raise ValueError("need at least two RR intervals")
    d = np.diff(rr)
    mean_rr = float(rr.mean())
    rmssd = float(np.sqrt(np.mean(d * d)))
    # tolerance keeps an exact 50 ms difference from flipping on rounding
    pnn50 = float(100.0 * np.count_nonzero(np.abs(d) > 0.050 + 1e-12) / d.size)
    return mean_rr, rmssd, pnn50


class HrvWarning(UserWarning):
    """An HRV estimate was computed from marginal input."""


def _lf_hf(rr, peak_times, resample_hz: float, nperseg: int) -> tuple[float, set[str]]:
    rr = np.asarray(rr, dtype=np.float64)
    t = np.asarray(peak_times, dtype=np.float64)
    if t.size == rr.size + 1:
        t = t[1:]
    if t.size != rr.size:
        raise ValueError("peak_times must align with rr (same length, or one longer)")
    if rr.size < 4:
        raise ValueError("need at least four RR intervals for a spectrum")
    flags: set[str] = set()
    if t[-1] - t[0] < 60.0:
        flags.add("short_record")
    grid = np.arange(t[0], t[-1], 1.0 / resample_hz)
    tach = CubicSpline(t, rr)(grid)
    tach -= tach.mean()
    seg = min(nperseg, grid.size)
    f, pxx = sps.welch(tach, fs=resample_hz, window="hann", nperseg=seg, noverlap=seg // 2, detrend=False)
    df = f[1] - f[0]
    lf = pxx[(f >= 0.04) & (f < 0.15)].sum() * df
    hf = pxx[(f >= 0.15) & (f < 0.40)].sum() * df
    if hf < 1e-12:
        flags.add("no_hf_power")
        return float("inf"), flags
    return float(lf / hf), flags


def lf_hf_ratio(rr, peak_times, resample_hz: float = 4.0, nperseg: int = 256) -> float:
    """LF (0.04-0.15 Hz) over HF (0.15-0.40 Hz) power of the RR tachogram.

    Each interval is placed at the time of the beat that ends it; the series
    is cubic-spline interpolated to ``resample_hz``, mean-removed, and
    Welch-averaged (Hann window, 50% overlap).  Records shorter than 60 s
    trigger an :class:`HrvWarning`; no HF power gives ``inf``.
    """
    ratio, flags = _lf_hf(rr, peak_times, resample_hz, nperseg)
    for flag in sorted(flags):
        warnings.warn(f"lf_hf_ratio: {flag}", HrvWarning, stacklevel=2)
    return ratio


def hrv_report(peaks: PeakAnnotations) -> HrvReport:
    """All four rhythm metrics for one record."""
    rr = rr_intervals(peaks)
    mean_rr, rmssd, pnn50 = time_domain_hrv(rr)
    try:
        lf_hf, flags = _lf_hf(rr, peaks.times, 4.0, 256)
    except ValueError:
        lf_hf, flags = float("nan"), {"too_few_beats"}
    return HrvReport(mean_rr, rmssd, pnn50, lf_hf, flags)


def _pulse_train(idx: np.ndarray, n: int, sigma: float) -> np.ndarray:
    train = np.zeros(n)
    np.add.at(train, idx[(idx >= 0) & (idx < n)], 1.0)
    half = int(np.ceil(4 * sigma))
    k = np.exp(-0.5 * (np.arange(-half, half + 1) / sigma) ** 2)
    return np.convolve(train, k, mode="same")


def rpeak_xcorr(
    pred: PeakAnnotations,
    ref: PeakAnnotations,
    signal_len: int,
    sigma_s: float = 0.050,
    max_lag_s: float = 0.250,
) -> float:
    """Similarity of two R-peak sets as smoothed pulse trains.

    Both sets are rendered as unit impulses blurred by a Gaussian of width
    ``sigma_s``; the result is the best normalized cross-correlation over
    lags within ``max_lag_s``.  An empty set scores 0 with an
    :class:`HrvWarning`.
    """
    if pred.fs != ref.fs:
        raise ValueError("annotation sets use different sampling rates")
    if len(pred) == 0 or len(ref) == 0:
        warnings.warn("rpeak_xcorr: empty annotation set", HrvWarning, stacklevel=2)
        return 0.0
    fs = ref.fs
    a = _pulse_train(ref.indices, signal_len, sigma_s * fs)
    b = _pulse_train(pred.indices, signal_len, sigma_s * fs)
    max_lag = min(int(round(max_lag_s * fs)), signal_len - 1)
    res = xcorr_max(a, b, max_lag)
    return res.coefficient


def write_annotations(path, peaks: PeakAnnotations) -> None:
    """One line per peak: ``index<TAB>time_s``."""
    lines = [f"{i}\t{i / peaks.fs:.6f}" for i in peaks.indices]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def read_annotations(path, fs: float) -> PeakAnnotations:
    idx = []
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise ValueError(f"{path}:{n}: expected 'index<TAB>time_s'")
        idx.append(int(parts[0]))
    return PeakAnnotations(np.asarray(idx, dtype=np.int64), fs)
