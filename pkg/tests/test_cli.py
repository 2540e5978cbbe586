import csv
import json

import numpy as np
import pytest

from ingra.cli import main
from ingra.config import ModelConfig, read_config_file, write_config_file
from ingra.errors import ConfigError

TRAIN_ARGS = ["--epochs", "2", "--pretrain-epochs", "1", "--window", "5", "--hidden", "4"]


def _files(root):
    return {p.relative_to(root).as_posix(): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file() and p.name != "run_manifest.json"}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["generate", "--structures", "2", "--per-structure", "5", "--vars", "3",
                 "--len", "40", "--seed", "4", "--out", str(root / "data")]) == 0
    assert main(["train", "--data", str(root / "data"), *TRAIN_ARGS, "--seed", "7",
                 "--out", str(root / "model")]) == 0
    return root


def test_generate_split_and_files(workspace):
    manifest = json.loads((workspace / "data" / "manifest.json").read_text())
    assert len(manifest["splits"]["train"]) == 8 and len(manifest["splits"]["unseen"]) == 2
    run = json.loads((workspace / "data" / "run_manifest.json").read_text())
    assert run["command"] == "generate" and run["seed"] == 4


def test_generate_small_split(tmp_path):
    assert main(["generate", "--structures", "1", "--per-structure", "5", "--vars", "3",
                 "--len", "30", "--out", str(tmp_path / "d")]) == 0
    manifest = json.loads((tmp_path / "d" / "manifest.json").read_text())
    assert (len(manifest["splits"]["train"]), len(manifest["splits"]["unseen"])) == (4, 1)


def test_generate_is_deterministic(tmp_path):
    for name in ("a", "b"):
        assert main(["generate", "--structures", "2", "--per-structure", "3", "--vars", "3",
                     "--len", "30", "--seed", "9", "--out", str(tmp_path / name)]) == 0
    assert _files(tmp_path / "a") == _files(tmp_path / "b")


def test_generate_refuses_non_empty_output(workspace, capsys):
    assert main(["generate", "--out", str(workspace / "data")]) == 2
    assert "not empty" in capsys.readouterr().err


def test_usage_errors_exit_2(tmp_path):
    assert main(["train", "--data", str(tmp_path / "missing"), "--out", str(tmp_path / "o")]) == 2
    assert main(["generate", "--structures", "0", "--out", str(tmp_path / "g")]) == 2
    assert main(["frobnicate"]) == 2


def test_train_outputs(workspace):
    model = workspace / "model"
    for name in ("model_final.json", "model_best.json", "training_log.csv", "config.txt",
                 "run_manifest.json"):
        assert (model / name).is_file()
    with open(model / "training_log.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert rows[-1]["epoch"] == "3" and rows[-1]["phase"] == "main"
    float(rows[-1]["total"])
    run = json.loads((model / "run_manifest.json").read_text())
    assert run["config"]["seed"] == 7 and run["config"]["train_epochs"] == 2


def test_train_rerun_is_byte_identical(workspace, tmp_path):
    assert main(["train", "--data", str(workspace / "data"), *TRAIN_ARGS, "--seed", "7",
                 "--out", str(tmp_path / "again")]) == 0
    for name in ("model_final.json", "model_best.json"):
        assert (tmp_path / "again" / name).read_bytes() == (workspace / "model" / name).read_bytes()


def test_alpha_one_diversity_settles_at_floor(workspace, tmp_path):
    assert main(["train", "--data", str(workspace / "data"), "--alpha", "1", "--epochs", "30",
                 "--pretrain-epochs", "1", "--window", "5", "--hidden", "4", "--lr", "0.1",
                 "--out", str(tmp_path / "a1")]) == 0
    with open(tmp_path / "a1" / "training_log.csv") as fh:
        div = [float(r["div"]) for r in csv.DictReader(fh) if r["phase"] == "main"]
    floor = 0.5 * 3  # gamma times the number of prototype pairs
    assert all(b <= a + 1e-12 for a, b in zip(div, div[1:]))
    assert div[-1] == pytest.approx(floor, abs=1e-12)


def test_config_file_with_flag_override(workspace, tmp_path):
    cfg = tmp_path / "c.txt"
    cfg.write_text("# pinned\nalpha = 0.25\nhidden_size = 4\nwindow_length = 5\n"
                   "train_epochs = 1\npretrain_epochs = 1\n")
    assert main(["train", "--data", str(workspace / "data"), "--config", str(cfg),
                 "--alpha", "0.75", "--out", str(tmp_path / "m")]) == 0
    values = read_config_file(tmp_path / "m" / "config.txt")
    assert values["alpha"] == "0.75" and values["hidden_size"] == "4"


def test_config_variable_mismatch_is_usage_error(workspace, tmp_path):
    cfg = tmp_path / "c.txt"
    cfg.write_text("num_variables = 7\n")
    assert main(["train", "--data", str(workspace / "data"), "--config", str(cfg),
                 "--out", str(tmp_path / "m")]) == 2


def test_config_file_round_trip(tmp_path):
    cfg = ModelConfig(num_variables=5, alpha=0.3, standardize=False)
    write_config_file(cfg, tmp_path / "c.txt")
    assert ModelConfig.from_dict(read_config_file(tmp_path / "c.txt")) == cfg
    with pytest.raises(ConfigError):
        ModelConfig.from_dict({"num_variables": 3, "bogus": 1})


def test_eval_reports_and_exports(workspace, tmp_path, capsys):
    out = tmp_path / "e"
    assert main(["eval", "--model", str(workspace / "model"), "--data", str(workspace / "data"),
                 "--export-attention", "--export-prototypes", "--out", str(out)]) == 0
    printed = capsys.readouterr().out
    assert "train: AP " in printed and "unseen: AP " in printed
    report = json.loads((out / "report_unseen.json").read_text())
    assert report["aggregate"]["count"] == 2
    with open(out / "attention_train.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0][:3] == ["id", "vector", "prototype"]
    for row in rows[1:]:
        values = np.array([float(v) for v in row[3:]])
        assert np.all(values >= 0) and abs(values.sum() - 1.0) <= 1e-9
    assert (out / "prototypes.csv").is_file()


def test_eval_unseen_only(workspace, tmp_path):
    out = tmp_path / "e"
    assert main(["eval", "--model", str(workspace / "model" / "model_final.json"),
                 "--data", str(workspace / "data"), "--split", "unseen", "--score-with", "q",
                 "--out", str(out)]) == 0
    assert (out / "report_unseen.json").is_file() and not (out / "report_train.json").exists()


def test_eval_rejects_mismatched_dataset(workspace, tmp_path):
    assert main(["generate", "--structures", "1", "--per-structure", "2", "--vars", "4",
                 "--len", "30", "--out", str(tmp_path / "d4")]) == 0
    assert main(["eval", "--model", str(workspace / "model"), "--data", str(tmp_path / "d4"),
                 "--out", str(tmp_path / "e")]) == 2


def test_baseline_report_and_determinism(workspace, tmp_path):
    for name in ("a", "b"):
        assert main(["baseline", "--data", str(workspace / "data"), "--out", str(tmp_path / name)]) == 0
    assert _files(tmp_path / "a") == _files(tmp_path / "b")
    report = json.loads((tmp_path / "a" / "report_train.json").read_text())
    assert report["aggregate"]["count"] == 8


def test_baseline_skips_short_series(tmp_path):
    assert main(["generate", "--structures", "1", "--per-structure", "2", "--vars", "3",
                 "--len", "25", "--out", str(tmp_path / "d")]) == 0
    assert main(["baseline", "--data", str(tmp_path / "d"), "--out", str(tmp_path / "b")]) == 0
    report = json.loads((tmp_path / "b" / "report_train.json").read_text())
    assert report["aggregate"]["count"] == 0 and len(report["skipped"]) == 2
    assert report["aggregate"]["ap_mean"] is None


def test_infer_on_csv(workspace, tmp_path):
    series = workspace / "data" / "series" / "ind00000.csv"
    out = tmp_path / "i"
    assert main(["infer", "--model", str(workspace / "model"), "--csv", str(series),
                 "--out", str(out)]) == 0
    forecast = json.loads((out / "forecast.json").read_text())
    assert np.isfinite(forecast["prediction"])
    with open(out / "attention.csv") as fh:
        assert len(list(csv.reader(fh))) == 4


def test_thread_limit_env(workspace, tmp_path, monkeypatch):
    monkeypatch.setenv("INGRA_THREADS", "1")
    assert main(["baseline", "--data", str(workspace / "data"), "--out", str(tmp_path / "b")]) == 0
    monkeypatch.setenv("INGRA_THREADS", "zero")
    assert main(["baseline", "--data", str(workspace / "data"), "--out", str(tmp_path / "c")]) == 2
