"""
Command-line pipeline: ``synth``, ``train``, ``denoise`` and ``eval``.

All commands read one JSON config file with optional sections
``synth``, ``data``, ``network``, ``train`` and ``loss``, and write into an
output directory that receives a ``manifest.json``.

Exit codes: 0 success, 1 validation error, 2 runtime or numeric error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .data import (
    FS_TARGET,
    WINDOW_LEN,
    FormatError,
    SynthConfig,
    load_records,
    make_windows,
    save_record,
    split_by_file,
    synth_generate,
)
from .dsp import bandpass
from .loss import LossConfig
from .network import CheckpointError, NetworkConfig, build_network, load_checkpoint, predict
from .qrs import HrvReport, hamilton_detect, hrv_report, rpeak_xcorr
from .tensor import NonFiniteError
from .trainer import TrainConfig, TrainingError, denoising_metrics, resume, train

log = logging.getLogger("cecgnet")


class CliError(Exception):
    def __init__(self, where: str, message: str, code: int = 1):
        super().__init__(message)
        self.where = where
        self.code = code


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class DataSection:
    records: int = 8
    train_count: int = 6
    test_count: int = 2
    split_seed: int = 0
    stride: int = WINDOW_LEN


def load_config(path: str | Path | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise CliError("cli.config", f"config file {p} not found")
    try:
        cfg = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise CliError("cli.config", f"{p}: invalid JSON ({exc})") from None
    if not isinstance(cfg, dict):
        raise CliError("cli.config", f"{p}: top level must be an object")
    unknown = set(cfg) - {"synth", "data", "network", "train", "loss"}
    if unknown:
        raise CliError("cli.config", f"{p}: unknown sections {sorted(unknown)}")
    return cfg


def _section(cfg: dict, name: str, cls, where: str, **overrides):
    try:
        obj = cls(**cfg.get(name, {})) if name != "network" else NetworkConfig.from_dict(cfg.get(name, {}))
        return replace(obj, **overrides) if overrides else obj
    except (TypeError, ValueError) as exc:
        raise CliError(where, f"invalid [{name}] config: {exc}") from None


def _train_config(cfg: dict, seed: int | None) -> TrainConfig:
    loss = _section(cfg, "loss", LossConfig, "loss.config")
    raw = dict(cfg.get("train", {}))
    raw["loss"] = loss
    if seed is not None:
        raw["seed"] = seed
    try:
        return TrainConfig(**raw)
    except (TypeError, ValueError) as exc:
        raise CliError("trainer.config", f"invalid [train] config: {exc}") from None


# ---------------------------------------------------------------------------
# manifest


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


class Manifest:
    def __init__(self, out: Path, command: str, args: argparse.Namespace, seed: int | None):
        self.path = out / "manifest.json"
        self.data = {
            "command": command,
            "config": getattr(args, "config", None),
            "seed": seed,
            "inputs": {k: getattr(args, k) for k in ("data", "checkpoint", "pred") if getattr(args, k, None)},
            "output": str(out),
            "version": __version__,
            "started": _now(),
            "finished": None,
        }
        self._write()

    def finish(self, **outputs) -> None:
        self.data["outputs"] = outputs
        self.data["finished"] = _now()
        self._write()

    def _write(self) -> None:
        self.path.write_text(json.dumps(self.data, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    cfg = load_config(args.config)
    seed_override = {"seed": args.seed} if args.seed is not None else {}
    synth = _section(cfg, "synth", SynthConfig, "data.synth_generate", **seed_override)
    data = _section(cfg, "data", DataSection, "data.config")
    if data.records < 1:
        raise CliError("data.config", "records must be >= 1")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = Manifest(out, "synth", args, synth.seed)
    index = []
    ext = args.format
    for i in range(data.records):
        rec = synth_generate(replace(synth, seed=synth.seed + i))
        name = f"record_{i:03d}.{ext}"
        save_record(rec, out / name, ext)
        index.append({"file": name, "source_id": rec.source_id, "fs": rec.fs, "samples": len(rec),
                      "beats": int(len(rec.r_peaks))})
    (out / "index.json").write_text(json.dumps({"synth": synth.to_dict(), "records": index}, indent=2) + "\n")
    manifest.finish(records=[e["file"] for e in index], index="index.json")
    print(f"wrote {len(index)} records to {out}")
    return 0


def _require_dir(path, where) -> Path:
    if path is None:
        raise CliError(where, "--data is required")
    p = Path(path)
    if not p.is_dir():
        raise CliError(where, f"data directory {p} does not exist")
    return p


def _records_by_id(recs):
    out = {}
    for r in recs:
        if r.source_id in out:
            raise CliError("data.load_records", f"duplicate source id {r.source_id!r}")
        out[r.source_id] = r
    return out


def cmd_train(args) -> int:
    data_dir = _require_dir(args.data, "cli.train")
    cfg = load_config(args.config)
    tcfg = _train_config(cfg, args.seed)
    ncfg = _section(cfg, "network", NetworkConfig, "network.config")
    data = _section(cfg, "data", DataSection, "data.config")
    records = load_records(data_dir)
    if not records:
        raise CliError("data.load_records", f"no records found in {data_dir}")
    train_recs, test_recs = split_by_file(records, data.train_count, data.test_count, data.split_seed)
    windows = make_windows(train_recs, stride=data.stride)
    if not windows:
        raise CliError("data.make_windows", "training records yield no windows")

    out = Path(args.out)
    ckpt_dir = out / "checkpoints"
    final = ckpt_dir / "final.ckpt"
    if args.resume and not final.is_file():
        raise CliError("trainer.resume", f"--resume given but {final} does not exist")
    out.mkdir(parents=True, exist_ok=True)
    manifest = Manifest(out, "train", args, tcfg.seed)
    (out / "split.json").write_text(json.dumps(
        {"train": [r.source_id for r in train_recs], "test": [r.source_id for r in test_recs]}, indent=2) + "\n")
    log_path = out / "train_log.jsonl"
    if args.resume:
        net, train_log = resume(final, windows, tcfg, checkpoint_dir=ckpt_dir, log_path=log_path)
    else:
        log_path.write_text("")
        net = build_network(ncfg)
        net, train_log = train(windows, net, tcfg, checkpoint_dir=ckpt_dir, log_path=log_path)
    (out / "model.ckpt").write_bytes(final.read_bytes())
    manifest.finish(checkpoint="model.ckpt", log="train_log.jsonl", epochs=len(train_log.records))
    if train_log.records:
        r0, r1 = train_log.records[0], train_log.records[-1]
        print(f"epochs {r0.epoch}..{r1.epoch}: loss {r0.l_total:.5g} -> {r1.l_total:.5g}")
    return 0


def _write_csv(path: Path, columns: dict[str, np.ndarray]) -> None:
    names = list(columns)
    arr = np.column_stack([columns[k] for k in names])
    lines = [",".join(names)] + [",".join(repr(float(v)) for v in row) for row in arr]
    path.write_text("\n".join(lines) + "\n")


def _read_csv(path: Path) -> dict[str, np.ndarray]:
    lines = path.read_text().splitlines()
    if not lines:
        raise CliError("cli.eval", f"{path} is empty")
    names = lines[0].split(",")
    arr = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:] if ln], dtype=np.float64)
    arr = arr.reshape(-1, len(names))
    return {n: arr[:, i] for i, n in enumerate(names)}


def cmd_denoise(args) -> int:
    if args.checkpoint is None:
        raise CliError("cli.denoise", "--checkpoint is required")
    data_dir = _require_dir(args.data, "cli.denoise")
    net = load_checkpoint(args.checkpoint)
    if net.config.input_length != WINDOW_LEN or net.config.in_channels != 3:
        raise CliError("network.load_checkpoint",
                       f"checkpoint expects [*, {net.config.in_channels}, {net.config.input_length}] windows")
    records = load_records(data_dir)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = Manifest(out, "denoise", args, None)
    written = []
    for rec in records:
        rec = rec.resampled(FS_TARGET)
        n_win = len(rec) // WINDOW_LEN
        if n_win == 0:
            warnings.warn(f"record {rec.source_id!r} has no complete window; skipped")
            continue
        n = n_win * WINDOW_LEN
        x = rec.cecg[:, :n].reshape(3, n_win, WINDOW_LEN).transpose(1, 0, 2)
        y = predict(net, x).reshape(n)
        name = f"{rec.source_id}.csv"
        _write_csv(out / name, {"t": np.arange(n) / FS_TARGET, "pred": y, "ref": rec.ref[:n]})
        written.append(name)
    manifest.finish(files=written)
    print(f"denoised {len(written)} records into {out}")
    return 0


HRV_COLUMNS = ("Mean RR", "RMSSD", "pNN50", "LF/HF")


def _hrv_row(signal: np.ndarray) -> tuple[HrvReport | None, np.ndarray]:
    peaks = hamilton_detect(bandpass(signal, FS_TARGET), FS_TARGET)
    if len(peaks) < 2:
        return None, peaks
    return hrv_report(peaks), peaks


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and not np.isfinite(v)):
        return "n/a"
    return f"{v:.3f}"


def cmd_eval(args) -> int:
    if args.pred is None:
        raise CliError("cli.eval", "--pred is required")
    pred_dir = Path(args.pred)
    if not pred_dir.is_dir():
        raise CliError("cli.eval", f"prediction directory {pred_dir} does not exist")
    ref_dir = _require_dir(args.data, "cli.eval")
    refs = _records_by_id(load_records(ref_dir))
    pred_files = sorted(pred_dir.glob("*.csv"))
    if not pred_files:
        raise CliError("cli.eval", f"no prediction CSVs in {pred_dir}")
    unmatched = [p.stem for p in pred_files if p.stem not in refs]
    if unmatched:
        raise CliError("cli.eval", f"predictions without a reference record: {unmatched}")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = Manifest(out, "eval", args, None)
    per_file = []
    all_pred, all_ref = [], []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for pf in pred_files:
            cols = _read_csv(pf)
            pred = cols["pred"]
            ref = refs[pf.stem].resampled(FS_TARGET).ref[: pred.size]
            if ref.size != pred.size:
                raise CliError("cli.eval", f"{pf.name}: prediction longer than its reference record")
            ref_hrv, ref_peaks = _hrv_row(ref)
            pred_hrv, pred_peaks = _hrv_row(pred)
            cc = rpeak_xcorr(pred_peaks, ref_peaks, pred.size)
            n_win = pred.size // WINDOW_LEN
            all_pred.append(pred[: n_win * WINDOW_LEN].reshape(n_win, WINDOW_LEN))
            all_ref.append(ref[: n_win * WINDOW_LEN].reshape(n_win, WINDOW_LEN))

            def pack(h):
                if h is None:
                    return dict.fromkeys(HRV_COLUMNS)
                return {"Mean RR": h.mean_rr_s, "RMSSD": h.rmssd_s, "pNN50": h.pnn50_pct,
                        "LF/HF": h.lf_hf if np.isfinite(h.lf_hf) else None}

            per_file.append({"file": pf.stem, "reference": pack(ref_hrv), "prediction": pack(pred_hrv),
                             "Cross Correlation": cc})
    summary = denoising_metrics(np.concatenate(all_pred), np.concatenate(all_ref))
    report = {
        "hrv": per_file,
        "denoising": {"MSE": summary.mse, "Cross Correlation": summary.cross_correlation,
                      "Lag": summary.lag, "windows": summary.n_windows},
    }
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    (out / "report.txt").write_text(render_report(report))
    manifest.finish(report="report.json", table="report.txt")
    print(render_report(report), end="")
    return 0


def render_report(report: dict) -> str:
    cols = list(HRV_COLUMNS)
    head = f"{'File':<14}" + "".join(f"{'ref ' + c:>12}" for c in cols) + "".join(
        f"{'pred ' + c:>13}" for c in cols) + f"{'Cross Correlation':>19}"
    lines = ["HRV analysis", head]
    for row in report["hrv"]:
        line = f"{row['file']:<14}"
        line += "".join(f"{_fmt(row['reference'][c]):>12}" for c in cols)
        line += "".join(f"{_fmt(row['prediction'][c]):>13}" for c in cols)
        line += f"{_fmt(row['Cross Correlation']):>19}"
        lines.append(line)
    d = report["denoising"]
    lines += ["", "Reconstruction", f"{'MSE':>10}{'Cross Correlation':>20}{'Lag':>10}{'Windows':>10}",
              f"{d['MSE']:>10.3f}{d['Cross Correlation']:>20.3f}{d['Lag']:>10.3f}{d['windows']:>10d}"]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cecgnet", description=__doc__.split("\n\n")[0].strip())
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic records")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--format", choices=("csv", "bin"), default="bin")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a denoising network")
    p.add_argument("--config")
    p.add_argument("--data")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--resume", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("denoise", help="run a trained network over records")
    p.add_argument("--checkpoint")
    p.add_argument("--data")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_denoise)

    p = sub.add_parser("eval", help="HRV and reconstruction report")
    p.add_argument("--pred")
    p.add_argument("--data")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error [{exc.where}]: {exc}", file=sys.stderr)
        return exc.code
    except (FormatError, CheckpointError, FileNotFoundError) as exc:
        print(f"error [{type(exc).__module__.split('.')[-1]}]: {exc}", file=sys.stderr)
        return 1
    except (TrainingError, NonFiniteError, FloatingPointError) as exc:
        print(f"error [{type(exc).__module__.split('.')[-1]}]: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error [{args.command}]: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
