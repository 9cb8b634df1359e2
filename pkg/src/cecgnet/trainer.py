"""
Minibatch SGD with classical momentum, checkpoint/resume, and the
denoising evaluation driver.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import WindowPair, stack_windows
from .dsp import minmax_normalize, mse, xcorr_max
from .loss import LossConfig, total_loss
from .network import Network, forward, predict, read_checkpoint, save_checkpoint, load_checkpoint
from .tensor import Tape, Tensor

__all__ = [
    "TrainConfig",
    "EpochRecord",
    "TrainLog",
    "TrainingError",
    "sgd_momentum_step",
    "train",
    "resume",
    "DenoiseSummary",
    "denoising_metrics",
    "evaluate_denoising",
]

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    momentum: float = 0.7
    batch_size: int = 256
    epochs: int = 2500
    seed: int = 0
    checkpoint_every: int = 0  # epochs; 0 disables periodic checkpoints
    clip_norm: float | None = None
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        if isinstance(self.loss, dict):
            object.__setattr__(self, "loss", LossConfig(**self.loss))
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EpochRecord:
    epoch: int
    l_signal: float
    l_frequency: float
    l_total: float
    wall_time_s: float


@dataclass
class TrainLog:
    records: list[EpochRecord] = field(default_factory=list)

    def append(self, rec: EpochRecord) -> None:
        if self.records and rec.epoch <= self.records[-1].epoch:
            raise ValueError("epochs must be strictly increasing")
        if not all(np.isfinite([rec.l_signal, rec.l_frequency, rec.l_total])):
            raise ValueError("non-finite loss in train log")
        self.records.append(rec)

    def to_jsonl(self, include_time: bool = True) -> str:
        lines = []
        for r in self.records:
            d = asdict(r)
            if not include_time:
                d.pop("wall_time_s")
            lines.append(json.dumps(d, sort_keys=True))
        return "".join(line + "\n" for line in lines)

    @classmethod
    def from_jsonl(cls, text: str) -> "TrainLog":
        out = cls()
        for line in text.splitlines():
            if line.strip():
                d = json.loads(line)
                d.setdefault("wall_time_s", 0.0)
                out.append(EpochRecord(**d))
        return out

    def totals(self) -> list[float]:
        return [r.l_total for r in self.records]


def sgd_momentum_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    velocity: dict[str, np.ndarray],
    lr: float,
    momentum: float,
) -> tuple[dict[str, np.ndarray], dict[str, np.ndarray]]:
    """``v <- momentum * v + g``; ``p <- p - lr * v``.  Returns new dicts."""
    if params.keys() != grads.keys() or params.keys() != velocity.keys():
        missing = set(params) ^ set(grads) | set(params) ^ set(velocity)
        raise ValueError(f"params/grads/velocity names differ: {sorted(missing)[:5]}")
    new_p, new_v = {}, {}
    for name, p in params.items():
        g, v = np.asarray(grads[name]), np.asarray(velocity[name])
        if g.shape != p.shape or v.shape != p.shape:
            raise ValueError(f"shape mismatch for {name}: param {p.shape}, grad {g.shape}, velocity {v.shape}")
        v = momentum * v + g
        new_v[name] = v
        new_p[name] = p - lr * v
    return new_p, new_v


def _rng_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def _restore_rng(state: dict) -> np.random.Generator:
    rng = np.random.default_rng()
    rng.bit_generator.state = state
    return rng


def _save_train_state(path, net, velocity, rng, epoch, cfg, train_log) -> None:
    meta = {
        "epoch": epoch,
        "rng": _rng_state(rng),
        "train_config": cfg.to_dict(),
        "log": train_log.to_jsonl(include_time=False),
    }
    save_checkpoint(net, path, extra_arrays={f"velocity/{k}": v for k, v in velocity.items()}, meta=meta)


def train(
    windows: Sequence[WindowPair] | tuple[np.ndarray, np.ndarray],
    net: Network,
    cfg: TrainConfig,
    checkpoint_dir: str | Path | None = None,
    log_path: str | Path | None = None,
    _state: dict | None = None,
) -> tuple[Network, TrainLog]:
    """Optimize ``net`` in place on ``windows`` and return it with the epoch log.

    Windows are reshuffled every epoch from the seeded generator that also
    drives dropout, so a run is fully determined by ``cfg.seed``.  The last
    partial minibatch is kept.  With ``checkpoint_dir`` set, the final state
    (and every ``cfg.checkpoint_every`` epochs) is written there including
    optimizer velocity and generator state, so :func:`resume` continues the
    exact same trajectory.
    """
    if isinstance(windows, tuple):
        X, Y = windows
    else:
        if len(windows) == 0:
            raise TrainingError("empty training set")
        X, Y = stack_windows(windows)
    if len(X) == 0:
        raise TrainingError("empty training set")
    n_cfg = net.config
    if X.shape[1:] != (n_cfg.in_channels, n_cfg.input_length) or Y.shape[1:] != (n_cfg.out_channels, n_cfg.input_length):
        raise TrainingError(f"window shapes {X.shape[1:]}, {Y.shape[1:]} do not match the network config")

    names = list(net.params)
    if _state is None:
        rng = np.random.default_rng(cfg.seed)
        velocity = {k: np.zeros_like(net.params[k].values) for k in names}
        start_epoch = 0
        train_log = TrainLog()
    else:
        rng, velocity, start_epoch, train_log = (
            _state["rng"], _state["velocity"], _state["epoch"], _state["log"],
        )

    ckpt_dir = Path(checkpoint_dir) if checkpoint_dir is not None else None
    if ckpt_dir is not None:
        ckpt_dir.mkdir(parents=True, exist_ok=True)
    log_fh = open(log_path, "a") if log_path is not None else None
    n = len(X)
    try:
        for epoch in range(start_epoch + 1, cfg.epochs + 1):
            t0 = time.perf_counter()
            order = rng.permutation(n)
            sums = np.zeros(3)
            for b, i in enumerate(range(0, n, cfg.batch_size)):
                idx = order[i : i + cfg.batch_size]
                net.zero_grad()
                with Tape() as tape:
                    pred = forward(net, Tensor(X[idx]), training=True, rng=rng)
                    loss, report = total_loss(pred, Tensor(Y[idx]), cfg.loss)
                if not np.isfinite(report.l_total):
                    raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}")
                tape.backward(loss)
                grads = {k: net.params[k].grad for k in names}
                if cfg.clip_norm is not None:
                    norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
                    if norm > cfg.clip_norm:
                        grads = {k: g * (cfg.clip_norm / norm) for k, g in grads.items()}
                new_p, velocity = sgd_momentum_step(
                    {k: net.params[k].values for k in names}, grads, velocity,
                    cfg.learning_rate, cfg.momentum,
                )
                for k in names:
                    net.params[k].values = new_p[k]
                sums += len(idx) * np.array([report.l_signal, report.l_frequency, report.l_total])
            means = sums / n
            rec = EpochRecord(epoch, float(means[0]), float(means[1]), float(means[2]), time.perf_counter() - t0)
            train_log.append(rec)
            log.info("epoch %d: total %.6g (signal %.6g, frequency %.6g)", epoch, rec.l_total, rec.l_signal, rec.l_frequency)
            if log_fh is not None:
                log_fh.write(json.dumps(asdict(rec), sort_keys=True) + "\n")
                log_fh.flush()
            if ckpt_dir is not None and cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
                _save_train_state(ckpt_dir / f"epoch{epoch:05d}.ckpt", net, velocity, rng, epoch, cfg, train_log)
        if ckpt_dir is not None:
            final_epoch = train_log.records[-1].epoch if train_log.records else start_epoch
            _save_train_state(ckpt_dir / "final.ckpt", net, velocity, rng, final_epoch, cfg, train_log)
    finally:
        if log_fh is not None:
            log_fh.close()
    return net, train_log


def resume(
    checkpoint,
    windows,
    cfg: TrainConfig | None = None,
    checkpoint_dir=None,
    log_path=None,
) -> tuple[Network, TrainLog]:
    """Continue a run from a checkpoint written by :func:`train`.

    ``cfg`` defaults to the stored training config; its ``epochs`` is the
    total epoch count, not an increment.
    """
    net = load_checkpoint(checkpoint)
    _config, meta, arrays = read_checkpoint(checkpoint)
    if "rng" not in meta:
        raise TrainingError(f"{checkpoint} carries no optimizer state")
    cfg = cfg or TrainConfig(**meta["train_config"])
    velocity = {k: arrays[f"extra/velocity/{k}"].copy() for k in net.params}
    state = {
        "rng": _restore_rng(meta["rng"]),
        "velocity": velocity,
        "epoch": int(meta["epoch"]),
        "log": TrainLog.from_jsonl(meta["log"]),
    }
    return train(windows, net, cfg, checkpoint_dir=checkpoint_dir, log_path=log_path, _state=state)


# ---------------------------------------------------------------------------
# evaluation


@dataclass(frozen=True)
class DenoiseSummary:
    mse: float
    cross_correlation: float
    lag: float
    n_windows: int

    def table(self, label: str = "model") -> str:
        head = f"{'Model':<12}{'MSE':>10}{'Cross Correlation':>20}{'Lag':>10}"
        row = f"{label:<12}{self.mse:>10.3f}{self.cross_correlation:>20.3f}{self.lag:>10.3f}"
        return head + "\n" + row


def denoising_metrics(pred: np.ndarray, ref: np.ndarray, max_lag: int = 256) -> DenoiseSummary:
    """Mean min-max-normalized MSE, peak cross-correlation and its lag (samples).

    ``pred`` and ``ref`` are ``[n_windows, length]`` (a singleton channel
    axis is accepted).
    """
    pred = np.asarray(pred, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if pred.ndim == 3:
        pred, ref = pred[:, 0], ref[:, 0]
    if pred.shape != ref.shape:
        raise ValueError(f"prediction shape {pred.shape} != reference shape {ref.shape}")
    if len(pred) == 0:
        raise ValueError("empty test set")
    errs, ccs, lags = [], [], []
    for p, r in zip(pred, ref):
        pn, rn = minmax_normalize(p), minmax_normalize(r)
        errs.append(mse(pn, rn))
        res = xcorr_max(rn, pn, min(max_lag, len(p) - 1))
        ccs.append(res.coefficient)
        lags.append(res.lag)
    return DenoiseSummary(float(np.mean(errs)), float(np.mean(ccs)), float(np.mean(lags)), len(pred))


def evaluate_denoising(net: Network, testset, max_lag: int = 256, batch_size: int = 64) -> DenoiseSummary:
    """Run ``net`` in eval mode over ``testset`` and score it against the references."""
    if isinstance(testset, tuple):
        X, Y = testset
    else:
        if len(testset) == 0:
            raise ValueError("empty test set")
        X, Y = stack_windows(testset)
    pred = predict(net, X, batch_size)
    return denoising_metrics(pred, Y, max_lag)
