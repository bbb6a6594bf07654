import csv
import json

import pytest

from amloda.cli import main

FAST = {
    "seed": 3,
    "data": {
        "window_len": 10,
        "train_stride": 60,
        "synth": {"occupied_intervals": [[21600, 43200], [64800, 79200]]},
    },
    "train": {"epochs": 3, "hidden_size": 4, "learning_rate": 1.0, "clip_norm": 1.0},
    "perturb": {"epsilon": [0, 0.001, 0.01]},
    "gaussian": {"seeds": [0, 1]},
}


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "config.json"
    cfg.write_text(json.dumps(FAST))
    out = root / "out"
    assert main(["train", "--config", str(cfg), "--out", str(out)]) == 0
    return cfg, out


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_train_outputs(trained):
    _, out = trained
    history = read_csv(out / "loss_history.csv")
    assert [int(r["epoch"]) for r in history] == [0, 1, 2]
    model = json.loads((out / "model.json").read_text())
    assert model["window_len"] == 10 and model["train_config"]["seed"] == 3
    assert "accuracy" in json.loads((out / "train_report.json").read_text())["test"]


def test_train_is_reproducible(trained, tmp_path):
    cfg, out = trained
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    assert (tmp_path / "model.json").read_bytes() == (out / "model.json").read_bytes()


def test_sweep_zero_row_matches_train(trained):
    cfg, out = trained
    assert main(["sweep", "--config", str(cfg), "--out", str(out), "--epsilon", "0"]) == 0
    rows = read_csv(out / "sweep.csv")
    assert len(rows) == 1 and list(rows[0]) == ["epsilon", "accuracy", "mcc", "auc"]
    test = json.loads((out / "train_report.json").read_text())["test"]
    assert float(rows[0]["accuracy"]) == test["accuracy"]
    assert float(rows[0]["auc"]) == test["auc"]


def test_sweep_deterministic_and_parallel(trained, tmp_path):
    cfg, out = trained
    a, b = tmp_path / "a", tmp_path / "b"
    ck = str(out / "model.json")
    assert main(["sweep", "--config", str(cfg), "--out", str(a), "--checkpoint", ck]) == 0
    assert main(["sweep", "--config", str(cfg), "--out", str(b), "--checkpoint", ck, "--jobs", "2"]) == 0
    for name in ("sweep.csv", "sweep.json", "traces/amloda_eps_0.01.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    assert [float(r["epsilon"]) for r in read_csv(a / "sweep.csv")] == [0, 0.001, 0.01]


def test_compare_and_bill(trained, tmp_path):
    cfg, out = trained
    ck = str(out / "model.json")
    assert main(["compare", "--config", str(cfg), "--out", str(tmp_path), "--checkpoint", ck,
                 "--sigma2", "7.5"]) == 0
    doc = json.loads((tmp_path / "compare.json").read_text())
    assert doc["gaussian"]["sigma2"] == 7.5 and not doc["gaussian"]["matched_distortion"]
    assert abs(doc["amloda"]["constraints"]["total_delta_w"]) < 1e-6
    assert all(r["total_delta_w"] != 0 for r in doc["gaussian"]["runs"])

    tou = tmp_path / "tou.json"
    tou.write_text(json.dumps({"type": "tou", "frames": [{"len": 3600, "rate": 0.2}]}))
    plp = tmp_path / "plp.json"
    plp.write_text(json.dumps({"type": "plp", "frame_len": 2, "thresholds": [300], "rates": [1, 2]}))
    assert main(["bill", "--out", str(tmp_path), "--tariff", str(tou), "--tariff", str(plp)]) == 2
    assert main(["bill", "--out", str(tmp_path), "--tariff", str(tou), "--tariff", str(plp), "--pad-zero"]) == 0
    rows = json.loads((tmp_path / "bill.json").read_text())
    for row in rows:
        if row["trace"].startswith("amloda"):
            assert row["invariant"] and row["delta"] == 0
        else:
            assert not row["invariant"]


def test_compare_matched_distortion(trained, tmp_path):
    cfg, out = trained
    assert main(["compare", "--config", str(cfg), "--out", str(tmp_path), "--checkpoint",
                 str(out / "model.json")]) == 0
    doc = json.loads((tmp_path / "compare.json").read_text())
    assert doc["gaussian"]["matched_distortion"] and doc["gaussian"]["sigma2"] > 0


def test_synth_command(tmp_path):
    assert main(["synth", "--out", str(tmp_path), "--data.synth.seed", "11"]) == 0
    assert json.loads((tmp_path / "synth_config.json").read_text())["seed"] == 11
    assert len(read_csv(tmp_path / "synth.csv")) == 86400


def test_gradcheck_command(tmp_path):
    assert main(["gradcheck", "--out", str(tmp_path), "--gradcheck.models", "5"]) == 0
    doc = json.loads((tmp_path / "gradcheck.json").read_text())
    assert doc["passed"] and len(doc["models"]) == 5


@pytest.mark.parametrize("argv,code", [
    (["frobnicate"], 2),
    (["train", "--no.such.field", "1"], 2),
    (["train", "--epsilon", "a,b"], 2),
    (["sweep", "--epsilon", "-1"], 2),
    (["train", "--data.path", "/definitely/missing.csv"], 2),
    (["train", "--config", "/definitely/missing.json"], 2),
    (["sweep", "--checkpoint", "/definitely/missing.json"], 2),
])
def test_usage_errors(argv, code, tmp_path, capsys):
    assert main(argv + ["--out", str(tmp_path)]) == code
    assert capsys.readouterr().err


def test_data_and_numeric_exit_codes(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("timestamp,power_w,occupied\n0,1,0\n1,abc,1\n")
    assert main(["train", "--data.path", str(bad), "--out", str(tmp_path)]) == 3
    assert "row 3" in capsys.readouterr().err
    argv = ["train", "--out", str(tmp_path), "--data.window_len", "10", "--train.epochs", "1",
            "--train.hidden_size", "2", "--train.learning_rate", "Infinity", "--train.clip_norm", "null"]
    assert main(argv) == 4
    assert "epoch 0" in capsys.readouterr().err


def test_eco_csv_source(tmp_path):
    rows = ["timestamp,power_w,occupied"]
    for t in range(4000):
        occ = int((t // 500) % 2)
        rows.append(f"{t},{100 + 300 * occ + (t % 3)},{occ}")
    rows[10] = "9,,0"
    path = tmp_path / "home.csv"
    path.write_text("\n".join(rows) + "\n")
    argv = ["train", "--data.path", str(path), "--out", str(tmp_path), "--data.window_len", "10",
            "--data.train_stride", "5", "--train.epochs", "2", "--train.hidden_size", "4"]
    assert main(argv) == 0
    assert json.loads((tmp_path / "cleaning.json").read_text()) == {"removed": [9]}
