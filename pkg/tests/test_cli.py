import json
import subprocess
import sys

import numpy as np
import pytest

from cecgnet.cli import main, render_report
from cecgnet.data import Record, load_records, save_record

CONFIG = {
    "synth": {"duration_s": 10.0, "seed": 3},
    "data": {"records": 4, "train_count": 3, "test_count": 1, "split_seed": 0},
    "network": {"levels": 3, "base_filters": 2},
    "train": {"epochs": 2, "batch_size": 8, "seed": 1},
    "loss": {"alpha": 1.0, "beta": 1.0},
}


def write_config(path, cfg=CONFIG):
    path.write_text(json.dumps(cfg))
    return str(path)


def tree(root, skip=("manifest.json",)):
    return {
        p.relative_to(root).as_posix(): p.read_bytes()
        for p in sorted(root.rglob("*"))
        if p.is_file() and p.name not in skip
    }


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = write_config(root / "config.json")
    assert main(["synth", "--config", cfg, "--out", str(root / "data")]) == 0
    assert main(["train", "--config", cfg, "--data", str(root / "data"), "--out", str(root / "run")]) == 0
    return root, cfg


class TestSynth:
    def test_outputs(self, workspace):
        root, _ = workspace
        names = sorted(p.name for p in (root / "data").iterdir())
        assert names == ["index.json", "manifest.json"] + [f"record_{i:03d}.bin" for i in range(4)]
        index = json.loads((root / "data" / "index.json").read_text())
        assert [r["source_id"] for r in index["records"]] == [f"synth-{3 + i}" for i in range(4)]
        manifest = json.loads((root / "data" / "manifest.json").read_text())
        assert manifest["command"] == "synth" and manifest["finished"] is not None

    def test_byte_identical(self, workspace, tmp_path):
        root, cfg = workspace
        assert main(["synth", "--config", cfg, "--out", str(tmp_path)]) == 0
        assert tree(tmp_path) == tree(root / "data")

    def test_seed_override(self, workspace, tmp_path):
        _, cfg = workspace
        assert main(["synth", "--config", cfg, "--out", str(tmp_path), "--seed", "40"]) == 0
        assert load_records(tmp_path)[0].source_id == "synth-40"

    def test_csv_format(self, workspace, tmp_path):
        _, cfg = workspace
        assert main(["synth", "--config", cfg, "--out", str(tmp_path), "--format", "csv"]) == 0
        assert len(list(tmp_path.glob("*.csv"))) == 4

    def test_zero_duration(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "c.json", {"synth": {"duration_s": 0}})
        assert main(["synth", "--config", cfg, "--out", str(tmp_path / "o")]) == 1
        assert "synth" in capsys.readouterr().err

    def test_bad_config(self, tmp_path, capsys):
        p = tmp_path / "c.json"
        p.write_text("{not json")
        assert main(["synth", "--config", str(p), "--out", str(tmp_path / "o")]) == 1
        p.write_text(json.dumps({"mystery": {}}))
        assert main(["synth", "--config", str(p), "--out", str(tmp_path / "o")]) == 1


class TestTrain:
    def test_outputs(self, workspace):
        root, _ = workspace
        run = root / "run"
        assert {"manifest.json", "split.json", "train_log.jsonl", "model.ckpt", "checkpoints"} <= {
            p.name for p in run.iterdir()
        }
        split = json.loads((run / "split.json").read_text())
        assert len(split["train"]) == 3 and len(split["test"]) == 1
        assert not set(split["train"]) & set(split["test"])
        lines = (run / "train_log.jsonl").read_text().splitlines()
        assert [json.loads(x)["epoch"] for x in lines] == [1, 2]

    def test_resume_continues_epochs(self, workspace, tmp_path):
        root, _ = workspace
        cfg = dict(CONFIG, train=dict(CONFIG["train"], epochs=1))
        c1 = write_config(tmp_path / "c1.json", cfg)
        run = tmp_path / "run"
        assert main(["train", "--config", c1, "--data", str(root / "data"), "--out", str(run)]) == 0
        c2 = write_config(tmp_path / "c2.json", CONFIG)
        assert main(["train", "--config", c2, "--data", str(root / "data"), "--out", str(run), "--resume"]) == 0
        epochs = [json.loads(x)["epoch"] for x in (run / "train_log.jsonl").read_text().splitlines()]
        assert epochs == [1, 2]
        # the resumed run lands exactly where the uninterrupted one did
        assert (run / "model.ckpt").read_bytes() == (root / "run" / "model.ckpt").read_bytes()

    def test_missing_data_dir(self, tmp_path, capsys):
        out = tmp_path / "out"
        assert main(["train", "--data", str(tmp_path / "nope"), "--out", str(out)]) == 1
        assert not out.exists()
        assert "error [cli.train]" in capsys.readouterr().err

    def test_resume_without_checkpoint(self, workspace, tmp_path):
        root, cfg = workspace
        out = tmp_path / "out"
        assert main(["train", "--config", cfg, "--data", str(root / "data"), "--out", str(out), "--resume"]) == 1
        assert not out.exists()

    def test_bad_split(self, workspace, tmp_path, capsys):
        root, _ = workspace
        cfg = write_config(tmp_path / "c.json", dict(CONFIG, data={"train_count": 4, "test_count": 2}))
        assert main(["train", "--config", cfg, "--data", str(root / "data"), "--out", str(tmp_path / "o")]) == 1


class TestDenoiseEval:
    def test_denoise_lengths(self, workspace, tmp_path):
        root, _ = workspace
        out = tmp_path / "pred"
        assert main(["denoise", "--checkpoint", str(root / "run" / "model.ckpt"), "--data", str(root / "data"),
                     "--out", str(out)]) == 0
        files = sorted(out.glob("*.csv"))
        assert len(files) == 4
        lines = files[0].read_text().splitlines()
        assert lines[0] == "t,pred,ref"
        # 10 s at 1024 Hz holds 5 whole windows
        assert len(lines) - 1 == 5 * 2048

    def test_denoise_three_windows(self, tmp_path):
        rng = np.random.default_rng(0)
        data = tmp_path / "d"
        data.mkdir()
        save_record(Record(1024.0, rng.normal(size=(3, 3 * 2048 + 100)), rng.normal(size=3 * 2048 + 100), "x"),
                    data / "x.bin")
        save_record(Record(1024.0, np.zeros((3, 0)), np.zeros(0), "empty"), data / "y.bin")
        from cecgnet.network import NetworkConfig, build_network, save_checkpoint

        ckpt = tmp_path / "m.ckpt"
        save_checkpoint(build_network(NetworkConfig(levels=2, base_filters=2)), ckpt)
        with pytest.warns(UserWarning, match="empty"):
            assert main(["denoise", "--checkpoint", str(ckpt), "--data", str(data), "--out", str(tmp_path / "o")]) == 0
        assert [p.name for p in (tmp_path / "o").glob("*.csv")] == ["x.csv"]
        assert len((tmp_path / "o" / "x.csv").read_text().splitlines()) == 3 * 2048 + 1

    def test_denoise_incompatible_checkpoint(self, tmp_path, workspace):
        root, _ = workspace
        from cecgnet.network import NetworkConfig, build_network, save_checkpoint

        ckpt = tmp_path / "m.ckpt"
        save_checkpoint(build_network(NetworkConfig(levels=2, base_filters=2, input_length=64)), ckpt)
        assert main(["denoise", "--checkpoint", str(ckpt), "--data", str(root / "data"), "--out", str(tmp_path / "o")]) == 1

    def _identity_preds(self, root, out):
        out.mkdir()
        for rec in load_records(root / "data"):
            n = len(rec) // 2048 * 2048
            lines = ["t,pred,ref"] + [f"{i / 1024!r},{float(v)!r},{float(v)!r}" for i, v in enumerate(rec.ref[:n])]
            (out / f"{rec.source_id}.csv").write_text("\n".join(lines) + "\n")

    def test_eval_identity(self, workspace, tmp_path):
        root, _ = workspace
        self._identity_preds(root, tmp_path / "pred")
        assert main(["eval", "--pred", str(tmp_path / "pred"), "--data", str(root / "data"),
                     "--out", str(tmp_path / "rep")]) == 0
        rep = json.loads((tmp_path / "rep" / "report.json").read_text())
        assert rep["denoising"]["MSE"] == 0.0
        assert rep["denoising"]["Cross Correlation"] == pytest.approx(1.0)
        for row in rep["hrv"]:
            assert row["reference"] == row["prediction"]
            assert row["Cross Correlation"] == pytest.approx(1.0)
            assert set(row["reference"]) | {"Cross Correlation"} == {"Mean RR", "RMSSD", "pNN50", "LF/HF",
                                                                      "Cross Correlation"}
        text = (tmp_path / "rep" / "report.txt").read_text()
        assert text == render_report(rep)
        assert "Cross Correlation" in text.splitlines()[1]

    def test_eval_white_noise(self, workspace, tmp_path):
        root, _ = workspace
        rng = np.random.default_rng(0)
        pred = tmp_path / "pred"
        pred.mkdir()
        for rec in load_records(root / "data"):
            n = len(rec) // 2048 * 2048
            noise = rng.normal(size=n)
            lines = ["t,pred,ref"] + [f"{i / 1024!r},{float(v)!r},0.0" for i, v in enumerate(noise)]
            (pred / f"{rec.source_id}.csv").write_text("\n".join(lines) + "\n")
        assert main(["eval", "--pred", str(pred), "--data", str(root / "data"), "--out", str(tmp_path / "rep")]) == 0
        rep = json.loads((tmp_path / "rep" / "report.json").read_text())
        assert rep["denoising"]["MSE"] > 0.05
        for row in rep["hrv"]:
            assert row["Cross Correlation"] < 0.3

    def test_eval_unmatched(self, workspace, tmp_path):
        root, _ = workspace
        (tmp_path / "pred").mkdir()
        (tmp_path / "pred" / "stranger.csv").write_text("t,pred,ref\n0,0,0\n")
        assert main(["eval", "--pred", str(tmp_path / "pred"), "--data", str(root / "data"),
                     "--out", str(tmp_path / "rep")]) == 1


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "cecgnet", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    assert "synth" in res.stdout and "eval" in res.stdout
