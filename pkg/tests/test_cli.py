import csv
import json

import jsonschema
import numpy as np
import pytest

from conftest import make_net_a
from rollnet import cli, linearization
from rollnet.cli import load_schema, main
from rollnet.network import random_network, save_model


def _csv_dataset(path, X, y):
    with open(path, "w") as fh:
        fh.write(",".join([f"x{k}" for k in range(X.shape[1])] + ["label"]) + "\n")
        for row, lab in zip(X, y):
            fh.write(",".join(repr(float(v)) for v in row) + f",{int(lab)}\n")
    return f"csv:{path}"


def _validate(obj, name):
    jsonschema.validate(obj, load_schema(name))


@pytest.fixture
def net_a_files(tmp_path):
    save_model(make_net_a(), tmp_path / "a.json")
    ds = _csv_dataset(tmp_path / "pts.csv", np.array([[0.0, 0.0], [2.0, 2.0]]), [0, 1])
    return tmp_path / "a.json", ds


def _manifest(out):
    m = json.loads((out / "manifest.json").read_text())
    _validate(m, "manifest")
    for p in m["outputs"]:
        assert (out / p).exists() or __import__("pathlib").Path(p).exists()
    return m


def test_train_toy_vanilla_and_roll(tmp_path):
    for lam, extra in (("0", []), ("1", ["--c", "5"])):
        out = tmp_path / f"run{lam}"
        assert main(["train", "--dataset", "toy2d", "--lambda", lam, *extra, "--epochs", "3",
                     "--hidden", "8,8", "--out", str(out)]) == 0
        model = json.loads((out / "model.json").read_text())
        _validate(model, "model")
        with open(out / "history.csv") as fh:
            assert next(csv.reader(fh)) == ["epoch", "train_loss", "val_loss", "val_acc",
                                            "probe_median_eps2"]
        m = _manifest(out)
        assert m["config"]["roll"]["lambda"] == float(lam)
    assert m["config"]["roll"]["c"] == 5.0


def test_train_config_precedence(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"dataset": "toy2d", "epochs": 2, "lr": 0.05, "hidden": "4",
                               "lambda": 0.5, "c": 1}))
    out = tmp_path / "o"
    assert main(["train", "--config", str(cfg), "--lr", "0.02", "--out", str(out)]) == 0
    m = _manifest(out)
    assert m["config"]["recipe"]["lr"] == 0.02 and m["config"]["recipe"]["epochs"] == 2
    assert m["config"]["roll"]["lambda"] == 0.5


def test_train_usage_errors(tmp_path, capsys):
    assert main(["train", "--dataset", "idx:/nope/a,/nope/b", "--out", str(tmp_path)]) == 2
    assert main(["train", "--dataset", "bogus", "--out", str(tmp_path)]) == 2
    with pytest.raises(SystemExit) as e:
        main(["train", "--gamma", "abc"])
    assert e.value.code == 2


def test_certify_net_a(tmp_path, net_a_files):
    model, ds = net_a_files
    out = tmp_path / "c"
    assert main(["certify", "--model", str(model), "--dataset", ds, "--out", str(out)]) == 0
    rows = list(csv.DictReader(open(out / "certify.csv")))
    assert [float(r["eps_l2"]) for r in rows] == [1.0, 1.0]
    assert all(abs(float(r["eps_l1"]) - 1.0) <= 1e-7 for r in rows)
    summary = json.loads((out / "summary.json").read_text())
    _validate(summary, "certify_summary")
    assert summary["clr"]["upper"] == 2 and summary["clr"]["lower"] == 2
    for k in ("l2", "l1", "l2_scaled", "l1_scaled"):
        assert set(summary["margins"][k]) == {"p25", "p50", "p75", "p100"}
    _manifest(out)


def test_certify_l2_only(tmp_path, net_a_files):
    model, ds = net_a_files
    out = tmp_path / "c"
    assert main(["certify", "--model", str(model), "--dataset", ds, "--norm", "l2",
                 "--sigma", "0.5", "--out", str(out)]) == 0
    header = next(csv.reader(open(out / "certify.csv")))
    assert not any("l1" in h for h in header)
    row = next(csv.DictReader(open(out / "certify.csv")))
    assert float(row["eps_l2_scaled"]) == 0.5
    assert set(json.loads((out / "summary.json").read_text())["margins"]) == {"l2", "l2_scaled"}


def test_certify_dim_mismatch(tmp_path, rng):
    save_model(random_network((3, 4, 2), rng), tmp_path / "m.json")
    assert main(["certify", "--model", str(tmp_path / "m.json"), "--dataset", "toy2d",
                 "--out", str(tmp_path / "c")]) == 2


def test_attack_tiny_ball_and_defaults(tmp_path, net_a_files):
    model, ds = net_a_files
    out = tmp_path / "a"
    assert main(["attack", "--model", str(model), "--dataset", ds, "--eps-inf", "0.01",
                 "--n-points", "2", "--samples", "50", "--out", str(out)]) == 0
    rep = json.loads((out / "attack.json").read_text())
    _validate(rep, "attack_report")
    assert all(r["max_l1"] == 0.0 and r["expected_l1"] == 0.0 for r in rep["reports"])
    m = _manifest(out)
    assert (m["config"]["population"], m["config"]["ga_epochs"]) == (4800, 30)


def test_attack_bad_radius(tmp_path, net_a_files):
    model, ds = net_a_files
    for r in ("0", "-1"):
        with pytest.raises(SystemExit) as e:
            main(["attack", "--model", str(model), "--dataset", ds, "--eps-inf", r])
        assert e.value.code == 2


def test_gradcheck_random_4x300(capsys):
    assert main(["gradcheck", "--random-net", "20,300,300,300,300,5", "--points", "1",
                 "--batch", "8"]) == 0
    out = capsys.readouterr().out
    assert "PASS" in out and "timing" in out


def test_gradcheck_model_file(tmp_path):
    save_model(make_net_a(), tmp_path / "a.json")
    assert main(["gradcheck", "--model", str(tmp_path / "a.json"), "--no-timing"]) == 0


def test_gradcheck_corrupted_dp(monkeypatch, capsys):
    real = linearization.dp_gradients
    monkeypatch.setattr(cli.linmod, "dp_gradients", lambda net, p: real(net, p) * (1 + 1e-6))
    assert main(["gradcheck", "--random-net", "6,10,10,2", "--no-timing"]) == 1
    assert "FAIL" in capsys.readouterr().out


def test_threads_env(monkeypatch, tmp_path, net_a_files):
    monkeypatch.setenv("ROLL_THREADS", "1")
    model, ds = net_a_files
    assert main(["--threads", "1", "certify", "--model", str(model), "--dataset", ds,
                 "--norm", "l2", "--out", str(tmp_path / "c")]) == 0


def test_certify_deterministic(tmp_path, net_a_files):
    model, ds = net_a_files
    for k in range(2):
        main(["certify", "--model", str(model), "--dataset", ds, "--out", str(tmp_path / f"c{k}")])
    assert (tmp_path / "c0" / "certify.csv").read_bytes() == (tmp_path / "c1" / "certify.csv").read_bytes()
