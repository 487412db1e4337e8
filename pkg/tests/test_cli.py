from __future__ import annotations

import json

import pytest

from dynvio.cli import CliError, apply_override, load_config, main


@pytest.fixture
def out_root(tmp_path, monkeypatch):
    monkeypatch.setenv("DYNVIO_OUT", str(tmp_path / "root"))
    return tmp_path


SHORT = ["--set", "flight.duration=2.0", "--set", "flight.scene.n=150"]


def _json_out(capsys):
    return json.loads(capsys.readouterr().out)


def test_override_parsing():
    cfg = {"a": {"b": 1}}
    apply_override(cfg, "a.b=2.5")
    apply_override(cfg, "a.c=[1, 2]")
    apply_override(cfg, "name=circle")
    apply_override(cfg, "x.y.z=true")
    assert cfg == {"a": {"b": 2.5, "c": [1, 2]}, "name": "circle", "x": {"y": {"z": True}}}
    with pytest.raises(CliError):
        apply_override(cfg, "novalue")


def test_config_file_and_seed(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"seed": 3, "flight": {"duration": 4.0}}))
    cfg = load_config(p, ["flight.dt=0.02"], seed=9)
    assert cfg["seed"] == 9
    assert cfg["flight"]["duration"] == 4.0 and cfg["flight"]["dt"] == 0.02
    assert cfg["flight"]["trajectory"] == "circle"  # untouched defaults survive the merge


def test_simulate_is_idempotent(out_root, capsys):
    assert main(["simulate", "--out", str(out_root / "a"), *SHORT]) == 0
    a = _json_out(capsys)
    assert main(["simulate", "--out", str(out_root / "b"), *SHORT]) == 0
    b = _json_out(capsys)
    assert a["dataset_hash"] == b["dataset_hash"]
    assert main(["simulate", "--out", str(out_root / "c"), "--seed", "5", *SHORT]) == 0
    assert _json_out(capsys)["dataset_hash"] != a["dataset_hash"]
    rec = json.loads((out_root / "a" / "config.json").read_text())
    assert rec["command"] == "simulate" and len(rec["config_hash"]) == 16


def test_default_output_root(out_root, capsys):
    assert main(["simulate", *SHORT]) == 0
    assert (out_root / "root" / "simulate" / "dataset" / "imu.csv").exists()


def test_vio_run_and_evaluate_need_no_model(out_root, capsys):
    assert main(["simulate", "--out", str(out_root / "sim"), *SHORT]) == 0
    capsys.readouterr()
    ds = str(out_root / "sim" / "dataset")
    assert main(["run", "--out", str(out_root / "run"), "--set", f"dataset={ds}", "--set", 'modes=["vio"]']) == 0
    run = _json_out(capsys)
    diag = json.loads((out_root / "run" / "vio" / "diag.json").read_text())
    assert diag["config_hash"] == run["config_hash"]
    assert main(["evaluate", "--out", str(out_root / "ev"), "--set", f"dataset={ds}",
                 "--set", f"runs={out_root / 'run'}", "--set", 'modes=["vio"]']) == 0
    rows = _json_out(capsys)["rows"]
    assert rows[0]["mode"] == "vio" and rows[0]["ate_t"] < 0.5
    assert (out_root / "ev" / "report.md").exists()


def test_missing_inputs_give_error_json(out_root, capsys):
    code = main(["run", "--out", str(out_root / "r"), "--set", "dataset=/nonexistent/dir"])
    assert code == 1
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["command"] == "run" and "missing input" in err["message"]


def test_hdvio_without_model_is_an_error(out_root, capsys):
    assert main(["simulate", "--out", str(out_root / "sim"), *SHORT]) == 0
    capsys.readouterr()
    ds = str(out_root / "sim" / "dataset")
    assert main(["run", "--out", str(out_root / "r"), "--set", f"dataset={ds}", "--set", 'modes=["hdvio"]']) == 1
    assert "model file" in json.loads(capsys.readouterr().err.strip())["message"]


def test_bad_config_reported(out_root, capsys):
    bad = out_root / "bad.json"
    bad.write_text("{not json")
    assert main(["simulate", "--config", str(bad)]) == 1
    assert json.loads(capsys.readouterr().err)["error"] == "CliError"
    assert main(["simulate", "--out", str(out_root / "x"), "--set", "wind.kind=tornado", *SHORT]) == 1


def test_train_then_run_warns_on_hash_mismatch(out_root, capsys):
    assert main(["simulate", "--out", str(out_root / "sim"), *SHORT]) == 0
    capsys.readouterr()
    ds = str(out_root / "sim" / "dataset")
    train = ["--set", f'train.datasets=["{ds}"]', "--set", "train.epochs=1", "--set", "train.batch_size=8"]
    assert main(["train", "--out", str(out_root / "m"), *train]) == 0
    model = _json_out(capsys)["model"]
    assert (out_root / "m" / "loss.csv").read_text().startswith("epoch,train_loss,val_loss")
    run = ["run", "--set", f"dataset={ds}", "--set", f"model={model}", "--set", 'modes=["hdvio"]',
           "--set", "flight.duration=1.0"]
    assert main([*run, "--out", str(out_root / "r1"), *train]) == 0
    assert "warning" not in capsys.readouterr().err
    assert main([*run, "--out", str(out_root / "r2"), *train, "--set", "train.epochs=2"]) == 0
    warns = [json.loads(ln) for ln in capsys.readouterr().err.splitlines() if ln.startswith('{"warning"')]
    assert any("config hash" in w["warning"] for w in warns)


def test_repro_unknown_experiment(out_root, capsys):
    assert main(["repro", "no-such-thing", "--out", str(out_root / "x")]) == 1
    assert "unknown experiment" in json.loads(capsys.readouterr().err)["message"]


def test_repro_smoke_writes_force_csv(out_root, capsys):
    assert main(["repro", "smoke", "--out", str(out_root / "s")]) == 0
    doc = _json_out(capsys)
    assert doc["checks"]["all_finite"]
    assert (out_root / "s" / "smoke" / "force_smoke.csv").exists()
    assert json.loads((out_root / "s" / "smoke" / "metrics.json").read_text())["config_hash"] == doc["config_hash"]
