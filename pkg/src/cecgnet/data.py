"""
Records, windows and a synthetic capacitive-ECG generator.

A :class:`Record` holds three capacitive channels and a simultaneous
reference lead at one sampling rate.  Records are cut into fixed-length
:class:`WindowPair` s for training; splits are always made per record so
no recording contributes to both train and test sets.
"""

from __future__ import annotations

import csv
import io
import json
import struct
import warnings
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from .dsp import resample

__all__ = [
    "Record",
    "WindowPair",
    "SynthConfig",
    "FormatError",
    "ShortRecordWarning",
    "load_records",
    "save_record",
    "make_windows",
    "stack_windows",
    "split_by_file",
    "synth_generate",
    "ecg_template",
]

FS_TARGET = 1024.0
WINDOW_LEN = 2048


class FormatError(ValueError):
    """A record file could not be parsed."""


class ShortRecordWarning(UserWarning):
    """A record was too short to yield a single window."""


@dataclass
class Record:
    fs: float
    cecg: np.ndarray  # [3, n]
    ref: np.ndarray  # [n]
    source_id: str = ""
    r_peaks: np.ndarray | None = None  # ground-truth R sample indices (synthetic only)

    def __post_init__(self):
        self.cecg = np.asarray(self.cecg, dtype=np.float64)
        self.ref = np.asarray(self.ref, dtype=np.float64)
        if self.fs <= 0:
            raise ValueError("fs must be positive")
        if self.cecg.ndim != 2 or self.cecg.shape[0] != 3:
            raise ValueError(f"cecg must be [3, n], got {self.cecg.shape}")
        if self.ref.shape != (self.cecg.shape[1],):
            raise ValueError(f"ref length {self.ref.shape} != cecg length {self.cecg.shape[1]}")
        if self.r_peaks is not None:
            self.r_peaks = np.asarray(self.r_peaks, dtype=np.int64)

    def __len__(self) -> int:
        return int(self.ref.size)

    def resampled(self, fs_out: float) -> "Record":
        if fs_out == self.fs:
            return self
        peaks = None
        if self.r_peaks is not None:
            peaks = np.round(self.r_peaks * fs_out / self.fs).astype(np.int64)
        return Record(fs_out, resample(self.cecg, self.fs, fs_out), resample(self.ref, self.fs, fs_out),
                      self.source_id, peaks)


@dataclass
class WindowPair:
    x: np.ndarray  # [3, window_len]
    y: np.ndarray  # [1, window_len]
    record_id: str
    start: int


# ---------------------------------------------------------------------------
# file formats

BIN_MAGIC = b"CECGREC\x00"
BIN_VERSION = 1


def save_record(record: Record, path, format: str = "bin") -> None:
    """Write ``record`` as CSV (``t,ch1,ch2,ch3,ref``) or the binary format."""
    path = Path(path)
    if format == "csv":
        n = len(record)
        t = np.arange(n) / record.fs
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "ch1", "ch2", "ch3", "ref"])
        cols = np.vstack([t, record.cecg, record.ref]).T
        for row in cols:
            w.writerow([repr(float(v)) for v in row])
        path.write_text(buf.getvalue())
        return
    if format != "bin":
        raise ValueError(f"unknown format {format!r}")
    sid = record.source_id.encode("utf-8")
    peaks = record.r_peaks if record.r_peaks is not None else np.zeros(0, dtype=np.int64)
    with open(path, "wb") as fh:
        fh.write(BIN_MAGIC)
        fh.write(struct.pack("<IdIQ", BIN_VERSION, record.fs, 4, len(record)))
        fh.write(struct.pack("<I", len(sid)))
        fh.write(sid)
        fh.write(struct.pack("<BQ", record.r_peaks is not None, peaks.size))
        fh.write(np.ascontiguousarray(np.vstack([record.cecg, record.ref]), dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(peaks, dtype="<i8").tobytes())


def _load_bin(path: Path) -> Record:
    data = path.read_bytes()
    pos = 0

    def take(n, what):
        nonlocal pos
        if pos + n > len(data):
            raise FormatError(f"{path}: truncated while reading {what}")
        chunk = data[pos : pos + n]
        pos += n
        return chunk

    if take(len(BIN_MAGIC), "magic") != BIN_MAGIC:
        raise FormatError(f"{path}: bad magic")
    version, fs, nch, n = struct.unpack("<IdIQ", take(struct.calcsize("<IdIQ"), "header"))
    if version != BIN_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if nch != 4:
        raise FormatError(f"{path}: expected 4 channels, found {nch}")
    (slen,) = struct.unpack("<I", take(4, "source id length"))
    sid = take(slen, "source id").decode("utf-8")
    has_peaks, npk = struct.unpack("<BQ", take(struct.calcsize("<BQ"), "annotation header"))
    payload = np.frombuffer(take(8 * nch * n, "signal payload"), dtype="<f8").reshape(nch, n)
    peaks = np.frombuffer(take(8 * npk, "annotations"), dtype="<i8").astype(np.int64)
    if pos != len(data):
        raise FormatError(f"{path}: trailing bytes after payload")
    return Record(fs, payload[:3].copy(), payload[3].copy(), sid, peaks if has_peaks else None)


def _load_csv(path: Path) -> Record:
    with open(path, newline="") as fh:
        header = fh.readline().strip()
        if [h.strip() for h in header.split(",")] != ["t", "ch1", "ch2", "ch3", "ref"]:
            raise FormatError(f"{path}: header must be 't,ch1,ch2,ch3,ref', got {header!r}")
        rows = [r for r in csv.reader(fh) if r]
    try:
        arr = np.array(rows, dtype=np.float64)
    except ValueError:
        raise FormatError(f"{path}: non-numeric or ragged rows") from None
    if arr.ndim != 2 or arr.shape[1] != 5:
        raise FormatError(f"{path}: every row needs 5 columns")
    if arr.shape[0] < 2:
        raise FormatError(f"{path}: need at least two samples to infer fs")
    dt = np.diff(arr[:, 0])
    mean_dt = dt.mean()
    if mean_dt <= 0 or np.max(np.abs(dt - mean_dt)) > 1e-6 * mean_dt:
        raise FormatError(f"{path}: timestamps are not uniformly spaced")
    return Record(1.0 / mean_dt, arr[:, 1:4].T.copy(), arr[:, 4].copy(), path.stem)


def load_records(path, format: str | None = None) -> list[Record]:
    """Load one file, or every ``*.csv`` / ``*.bin`` file in a directory (sorted)."""
    path = Path(path)
    if path.is_dir():
        files = sorted(p for p in path.iterdir() if p.suffix in (".csv", ".bin"))
        if format is not None:
            files = [p for p in files if p.suffix == f".{format}"]
        return [r for p in files for r in load_records(p)]
    if not path.exists():
        raise FileNotFoundError(path)
    fmt = format or path.suffix.lstrip(".")
    if fmt == "csv":
        return [_load_csv(path)]
    if fmt == "bin":
        return [_load_bin(path)]
    raise FormatError(f"{path}: unknown format {fmt!r}")


# ---------------------------------------------------------------------------
# windowing and splitting


def make_windows(
    records: Sequence[Record],
    fs_target: float = FS_TARGET,
    window_len: int = WINDOW_LEN,
    stride: int | None = None,
) -> list[WindowPair]:
    """Cut records into ``window_len`` windows every ``stride`` samples.

    Records are resampled to ``fs_target`` first; a trailing partial window
    is dropped.  Records shorter than one window yield a
    :class:`ShortRecordWarning` each.
    """
    stride = window_len if stride is None else stride
    if stride < 1:
        raise ValueError("stride must be >= 1")
    out: list[WindowPair] = []
    for rec in records:
        rec = rec.resampled(fs_target)
        n = len(rec)
        if n < window_len:
            warnings.warn(f"record {rec.source_id!r} shorter than one window ({n} < {window_len})",
                          ShortRecordWarning, stacklevel=2)
            continue
        for start in range(0, n - window_len + 1, stride):
            sl = slice(start, start + window_len)
            out.append(WindowPair(rec.cecg[:, sl].copy(), rec.ref[None, sl].copy(), rec.source_id, start))
    return out


def stack_windows(windows: Sequence[WindowPair]) -> tuple[np.ndarray, np.ndarray]:
    """``([n, 3, L], [n, 1, L])`` arrays from a window list."""
    if not windows:
        raise ValueError("no windows")
    return np.stack([w.x for w in windows]), np.stack([w.y for w in windows])


def split_by_file(records: Sequence[Record], train_count: int, test_count: int, seed: int = 0):
    """Seeded shuffle of whole records into disjoint train and test lists."""
    if train_count < 0 or test_count < 0:
        raise ValueError("counts must be non-negative")
    if train_count + test_count > len(records):
        raise ValueError(
            f"cannot split {len(records)} records into {train_count} train + {test_count} test"
        )
    order = np.random.default_rng(seed).permutation(len(records))
    train = [records[i] for i in order[:train_count]]
    test = [records[i] for i in order[train_count : train_count + test_count]]
    return train, test


# ---------------------------------------------------------------------------
# synthetic data

# (amplitude, offset from R in seconds, width in seconds) for P, Q, R, S, T
PQRST = (
    (0.12, -0.200, 0.025),
    (-0.12, -0.028, 0.008),
    (1.00, 0.000, 0.010),
    (-0.22, 0.030, 0.010),
    (0.30, 0.260, 0.040),
)


@dataclass(frozen=True)
class SynthConfig:
    fs: float = FS_TARGET
    duration_s: float = 60.0
    heart_rate_bpm: float = 72.0
    heart_rate_std_bpm: float = 3.0
    channel_gains: tuple[float, float, float] = (1.0, 0.8, 0.6)
    gain_drift: float = 0.3
    gain_drift_hz: float = 0.05
    baseline_wander_amplitude: float = 0.4
    baseline_wander_hz: float = 0.25
    burst_rate_hz: float = 0.15
    burst_amplitude: float = 1.5
    burst_duration_s: float = 1.0
    noise_sigma: float = 0.05
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "channel_gains", tuple(float(g) for g in self.channel_gains))
        if len(self.channel_gains) != 3:
            raise ValueError("channel_gains needs three entries")
        if self.duration_s <= 0:
            raise ValueError("duration_s must be positive")
        if self.fs <= 0:
            raise ValueError("fs must be positive")
        if not 30 <= self.heart_rate_bpm <= 200:
            raise ValueError("heart_rate_bpm must be within [30, 200]")
        nonneg = ("heart_rate_std_bpm", "gain_drift", "baseline_wander_amplitude", "burst_rate_hz",
                  "burst_amplitude", "burst_duration_s", "noise_sigma", "gain_drift_hz",
                  "baseline_wander_hz")
        for name in nonneg:
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if any(g < 0 for g in self.channel_gains):
            raise ValueError("channel gains must be non-negative")

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown synth config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channel_gains"] = list(self.channel_gains)
        return d


def ecg_template(t_rel: np.ndarray) -> np.ndarray:
    """Sum-of-Gaussians P-QRS-T complex evaluated at times relative to R."""
    out = np.zeros_like(t_rel, dtype=np.float64)
    for amp, mu, sigma in PQRST:
        out += amp * np.exp(-0.5 * ((t_rel - mu) / sigma) ** 2)
    return out


def _beat_times(cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    rr0 = 60.0 / cfg.heart_rate_bpm
    times = []
    t = rr0 / 2
    while t < cfg.duration_s - 0.5 * rr0 + 1e-9:
        times.append(t)
        hr = cfg.heart_rate_bpm
        if cfg.heart_rate_std_bpm > 0:
            hr = float(np.clip(rng.normal(hr, cfg.heart_rate_std_bpm), 30.0, 200.0))
        t += 60.0 / hr
    return np.asarray(times)


def synth_generate(cfg: SynthConfig) -> Record:
    """Clean reference lead plus three motion-corrupted capacitive channels.

    Beats are placed at snapped sample positions so the ground-truth R
    indices are exact.  Each channel is ``gain_i(t) * ref`` (slowly drifting
    coupling gain) plus baseline wander, random-walk artifact bursts arriving
    as a Poisson process, and white noise.
    """
    rng = np.random.default_rng(cfg.seed)
    fs = cfg.fs
    n = int(round(cfg.duration_s * fs))
    t = np.arange(n) / fs

    beat_idx = np.unique(np.round(_beat_times(cfg, rng) * fs).astype(np.int64))
    beat_idx = beat_idx[(beat_idx >= 0) & (beat_idx < n)]
    ref = np.zeros(n)
    half = int(np.ceil(0.5 * fs))
    for b in beat_idx:
        lo, hi = max(0, b - half), min(n, b + half)
        ref[lo:hi] += ecg_template((np.arange(lo, hi) - b) / fs)

    cecg = np.empty((3, n))
    burst_starts = rng.uniform(0, cfg.duration_s, rng.poisson(cfg.burst_rate_hz * cfg.duration_s))
    burst_lens = np.maximum(rng.exponential(cfg.burst_duration_s, burst_starts.size), 0.1)
    for ch in range(3):
        phase = rng.uniform(0, 2 * np.pi, 2)
        gain = cfg.channel_gains[ch] * (1.0 + cfg.gain_drift * np.sin(2 * np.pi * cfg.gain_drift_hz * t + phase[0]))
        wander = cfg.baseline_wander_amplitude * np.sin(2 * np.pi * cfg.baseline_wander_hz * t + phase[1])
        bursts = np.zeros(n)
        for s, d in zip(burst_starts, burst_lens):
            lo = int(s * fs)
            hi = min(n, lo + max(2, int(d * fs)))
            walk = np.cumsum(rng.normal(size=hi - lo))
            walk -= np.linspace(walk[0], walk[-1], walk.size)  # pin both ends to zero
            peak = np.abs(walk).max()
            if peak > 0:
                bursts[lo:hi] += cfg.burst_amplitude * rng.uniform(0.5, 1.0) * walk / peak
        noise = rng.normal(0.0, 1.0, n) * cfg.noise_sigma
        cecg[ch] = gain * ref + wander + bursts + noise
    return Record(fs, cecg, ref, f"synth-{cfg.seed}", beat_idx)


def load_synth_config(path) -> SynthConfig:
    return SynthConfig.from_dict(json.loads(Path(path).read_text()))
