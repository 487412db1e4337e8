"""Command-line driver: simulate, train, run, evaluate and repro.

Every command reads one JSON config (``--config``) with ``--set key=value``
overrides, writes into ``--out`` (default ``$DYNVIO_OUT/<command>``) and
records the resolved config and its hash next to its outputs. Failures
print a JSON error object on stderr and exit with status 1.
"""
from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import os
import sys
import warnings
from pathlib import Path

import numpy as np

OUT_ENV = "DYNVIO_OUT"

DEFAULTS = {
    "seed": 0,
    "dataset": None,  # dataset dir consumed by run/evaluate
    "model": None,  # model file consumed by run
    "runs": None,  # run output dir consumed by evaluate
    "modes": ["vio", "vimo", "hdvio"],
    "flight": {"trajectory": "circle", "params": {"radius": 3.0, "speed": 2.0, "height": 1.5}, "duration": 10.0,
               "dt": 0.01, "thrust_bias": 1.0, "camera_pitch": 0.0,
               "scene": {"kind": "room", "n": 400, "extent": [30.0, 30.0, 8.0]}},
    "world": {},
    "aero": {"fuselage_area": 0.01, "fuselage_cd": 2.0},
    "wind": {"kind": "none"},
    "noise": {"gyro_noise": 1e-3, "accel_noise": 0.02, "thrust_noise": 0.02, "pixel_noise": 0.5,
              "max_features": 40},
    # datasets: list of disturbance-free dataset dirs; empty means the built-in training flights
    "train": {"variant": "tcn", "datasets": [], "max_speed": 10.0, "epochs": 60, "batch_size": 32},
    "estimator": {"pixel_sigma": 0.5, "imu": {"sigma_a": 0.05}, "dynamics": {"sigma_ft": 0.2}},
}


class CliError(Exception):
    pass


# ---- config handling


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _parse_value(text: str):
    try:
        return json.loads(text)
    except ValueError:
        return text


def apply_override(cfg: dict, item: str) -> None:
    """Set a dotted key from ``key=value``; the value is parsed as JSON when possible."""
    if "=" not in item:
        raise CliError(f"--set expects key=value, got {item!r}")
    key, text = item.split("=", 1)
    parts = key.strip().split(".")
    node = cfg
    for p in parts[:-1]:
        if not isinstance(node.get(p), dict):
            node[p] = {}
        node = node[p]
    node[parts[-1]] = _parse_value(text)


def load_config(path=None, overrides=(), seed=None) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            user = json.loads(Path(path).read_text())
        except OSError as e:
            raise CliError(f"cannot read config {path}: {e}") from e
        except ValueError as e:
            raise CliError(f"config {path} is not valid JSON: {e}") from e
        if not isinstance(user, dict):
            raise CliError("config must be a JSON object")
        cfg = _merge(cfg, user)
    for item in overrides:
        apply_override(cfg, item)
    if seed is not None:
        cfg["seed"] = int(seed)
    return cfg


def config_hash(doc) -> str:
    return hashlib.sha256(json.dumps(doc, sort_keys=True, default=str).encode()).hexdigest()[:16]


def _train_section_hash(cfg: dict) -> str:
    keys = ("seed", "world", "aero", "noise", "train")
    return config_hash({k: cfg[k] for k in keys})


def _record(out: Path, command: str, cfg: dict, extra: dict | None = None) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    doc = {"command": command, "config_hash": config_hash(cfg), "config": cfg}
    if extra:
        doc.update(extra)
    (out / "config.json").write_text(json.dumps(doc, indent=1, sort_keys=True, default=str))
    return doc


def _need(path, what: str) -> Path:
    if path is None:
        raise CliError(f"missing input: no {what} given (set it in the config or with --set)")
    p = Path(path)
    if not p.exists():
        raise CliError(f"missing input: {what} {p} does not exist")
    return p


# ---- config -> library objects


def _flight_spec(cfg: dict, name: str = "cli"):
    from .experiments.flights import FlightSpec
    from .sim import AeroConfig, SensorNoiseConfig, WorldConfig

    f = cfg["flight"]
    known = {"trajectory", "params", "duration", "dt", "thrust_bias", "camera_pitch", "scene", "max_depth"}
    unknown = set(f) - known
    if unknown:
        raise CliError(f"unknown flight keys {sorted(unknown)}")
    try:
        world = WorldConfig(**{k: (np.asarray(v, dtype=float) if k in ("gravity", "external_force") else v)
                               for k, v in cfg["world"].items()})
        aero = AeroConfig(**{k: (np.asarray(v, dtype=float) if k in ("board_normal", "linear_drag") else v)
                             for k, v in cfg["aero"].items()})
        noise = SensorNoiseConfig(**cfg["noise"])
    except TypeError as e:
        raise CliError(f"bad config: {e}") from e
    scene = dict(f.get("scene", {}))
    if "extent" in scene:
        scene["extent"] = tuple(scene["extent"])
    return FlightSpec(name, trajectory=f.get("trajectory", "circle"), params=dict(f.get("params", {})),
                      duration=float(f.get("duration", 10.0)), dt=float(f.get("dt", 0.01)), seed=int(cfg["seed"]),
                      world=world, aero=aero, wind=_wind(cfg["wind"]), noise=noise,
                      thrust_bias=float(f.get("thrust_bias", 1.0)), scene=scene,
                      camera_pitch=float(f.get("camera_pitch", 0.0)), max_depth=float(f.get("max_depth", np.inf)))


def _wind(d: dict):
    from .sim import WindField

    d = dict(d)
    kind = d.pop("kind", "none")
    if kind == "none":
        return WindField.none()
    if kind == "constant":
        return WindField.constant(d["vector"], ramp_time=d.get("ramp_time", 0.0))
    if kind == "patch":
        return WindField.patch(d["center"], d["half_extent"], d["vector"], **{
            k: d[k] for k in ("spacing", "margin", "smoothing", "ramp_time") if k in d})
    raise CliError(f"unknown wind kind {kind!r}; expected none, constant or patch")


def _estimator_config(cfg: dict, mode: str):
    from .estimator import EstimatorConfig

    est = copy.deepcopy(cfg["estimator"])
    est.setdefault("solver", {})["mode"] = mode
    try:
        return EstimatorConfig.from_dict(est)
    except TypeError as e:
        raise CliError(f"bad estimator config: {e}") from e


def dataset_hash(path) -> str:
    """Digest of every file in a dataset directory, in name order."""
    h = hashlib.sha256()
    for p in sorted(Path(path).iterdir()):
        if p.is_file():
            h.update(p.name.encode())
            h.update(p.read_bytes())
    return h.hexdigest()[:16]


# ---- commands


def cmd_simulate(cfg: dict, out: Path) -> dict:
    from .experiments.flights import fly
    from .sim import export_dataset

    spec = _flight_spec(cfg)
    log, truth = fly(spec)
    ds = export_dataset(log, truth, out / "dataset")
    h = dataset_hash(ds)
    _record(out, "simulate", cfg, {"dataset": str(ds), "dataset_hash": h})
    return {"dataset": str(ds), "dataset_hash": h}


def cmd_train(cfg: dict, out: Path, log=None) -> dict:
    from .experiments.training import training_flights, training_samples
    from .resmodel import TrainConfig, make_model, samples_from_log, save_model, train
    from .sim import import_dataset

    tc = dict(cfg["train"])
    variant = tc.pop("variant", "tcn")
    datasets = tc.pop("datasets", []) or []
    max_speed = float(tc.pop("max_speed", 10.0))
    tc.setdefault("seed", int(cfg["seed"]))
    try:
        tcfg = TrainConfig(**tc)
    except TypeError as e:
        raise CliError(f"bad train config: {e}") from e
    if datasets:
        samples = []
        for d in datasets:
            lg, truth = import_dataset(_need(d, "training dataset"))
            if truth is None:
                raise CliError(f"training dataset {d} has no ground truth")
            samples += samples_from_log(lg, truth)
    else:
        samples = training_samples(training_flights(max_speed=max_speed, seed=100 + int(cfg["seed"])))
    if not samples:
        raise CliError("no training samples")
    model = make_model(variant, seed=int(cfg["seed"])) if variant == "tcn" else make_model(variant)
    res = train(model, samples, tcfg, log=log)
    h = _train_section_hash(cfg)
    out.mkdir(parents=True, exist_ok=True)
    path = save_model(model, out / "model.json", train_seed=tcfg.seed, config_hash=h)
    with open(out / "loss.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "val_loss"])
        for i, (a, b) in enumerate(zip(res.train_loss, res.val_loss)):
            w.writerow([i, repr(float(a)), repr(float(b))])
    _record(out, "train", cfg, {"model": str(path), "train_hash": h, "n_samples": len(samples),
                                "best_epoch": res.best_epoch})
    return {"model": str(path), "train_hash": h, "best_epoch": res.best_epoch,
            "val_loss": float(min(res.val_loss)) if res.val_loss else None}


MODEL_MODES = ("hdvio",)


def cmd_run(cfg: dict, out: Path) -> dict:
    from .estimator import run_sequence, write_outputs
    from .resmodel import load_model, read_model_file
    from .sim import import_dataset

    ds = _need(cfg["dataset"], "dataset")
    log, truth = import_dataset(ds)
    modes = list(cfg["modes"])
    model = None
    if any(m in MODEL_MODES for m in modes):
        mpath = _need(cfg["model"], "model file")
        stored = read_model_file(mpath).get("config_hash")
        expected = _train_section_hash(cfg)
        if stored != expected:
            warnings.warn(f"model {mpath} was trained with config hash {stored}, this config gives {expected}",
                          RuntimeWarning)
        model = load_model(mpath)
    h = config_hash(cfg)
    result = {}
    for m in modes:
        ecfg = _estimator_config(cfg, m)
        if ecfg.init_from_truth and truth is None:
            raise CliError("dataset has no ground truth; set estimator.init_from_truth=false")
        res = run_sequence(log, model if m in MODEL_MODES else None, ecfg, truth)
        write_outputs(res, out / m, extra={"config_hash": h, "dataset": str(ds)})
        result[m] = {"frames": len(res), "seconds": res.seconds}
    _record(out, "run", cfg, {"dataset_hash": dataset_hash(ds)})
    return {"config_hash": h, "modes": result}


def cmd_evaluate(cfg: dict, out: Path) -> dict:
    from .estimator.run import read_trajectory
    from .eval import compare_modes
    from .sim import import_dataset

    ds = _need(cfg["dataset"], "dataset")
    runs_dir = _need(cfg["runs"], "run output dir")
    _, truth = import_dataset(ds)
    if truth is None:
        raise CliError(f"dataset {ds} has no ground truth to evaluate against")
    runs = {}
    for m in cfg["modes"]:
        d = runs_dir / m
        if not (d / "traj_est.csv").exists():
            raise CliError(f"missing input: no run output for mode {m!r} in {runs_dir}")
        runs[m] = read_trajectory(d)
    name = Path(ds).name
    rep = compare_modes({name: runs}, {name: truth}, out_dir=out, mass=truth_mass(cfg))
    _record(out, "evaluate", cfg)
    return {"rows": rep.rows()}


def truth_mass(cfg: dict) -> float:
    return float(cfg["world"].get("mass", 1.0))


def cmd_repro(name: str, out: Path, cache_dir=None, log=None) -> dict:
    from .experiments.registry import EXPERIMENTS, run_experiment

    if name not in EXPERIMENTS:
        raise CliError(f"unknown experiment {name!r}; available: {sorted(EXPERIMENTS)}")
    res = run_experiment(name, out, cache_dir=cache_dir, log=log)
    return res.to_dict()


# ---- entry point


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dynvio", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("simulate", "train", "run", "evaluate", "repro"):
        s = sub.add_parser(name)
        if name == "repro":
            s.add_argument("experiment")
            s.add_argument("--cache", default=None, help="model cache dir (default <out>/models)")
        s.add_argument("--config", default=None)
        s.add_argument("--seed", type=int, default=None)
        s.add_argument("--out", default=None)
        s.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    return p


def _emit(doc) -> None:
    print(json.dumps(doc, indent=1, sort_keys=True, default=str))


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    root = Path(os.environ.get(OUT_ENV, "dynvio-out"))
    out = Path(args.out) if args.out else root / args.command
    log = lambda msg: print(msg, file=sys.stderr, flush=True)  # noqa: E731
    try:
        cfg = load_config(args.config, args.overrides, args.seed)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", RuntimeWarning)
            if args.command == "simulate":
                doc = cmd_simulate(cfg, out)
            elif args.command == "train":
                doc = cmd_train(cfg, out, log=log)
            elif args.command == "run":
                doc = cmd_run(cfg, out)
            elif args.command == "evaluate":
                doc = cmd_evaluate(cfg, out)
            else:
                doc = cmd_repro(args.experiment, out, cache_dir=args.cache, log=log)
        for w in caught:
            print(json.dumps({"warning": str(w.message)}), file=sys.stderr)
    except Exception as e:  # every failure becomes machine-readable
        print(json.dumps({"error": type(e).__name__, "message": str(e), "command": args.command}), file=sys.stderr)
        return 1
    _emit(doc)
    return 0


if __name__ == "__main__":
    sys.exit(main())
