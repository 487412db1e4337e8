"""Disturbance-free training flights and cached residual-model training."""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from ..resmodel import TCNModel, TrainConfig, load_model, samples_from_log, save_model, train
from ..resmodel.io import ModelFileError
from ..sim import AeroConfig, SensorNoiseConfig
from .flights import FlightSpec, fly

DRAG_AERO = AeroConfig(fuselage_area=0.01, fuselage_cd=2.0)
TRAIN_NOISE = SensorNoiseConfig(gyro_noise=1e-3, accel_noise=0.02, thrust_noise=0.02)
# visual features are irrelevant for training; a sparse scene keeps synthesis cheap
TRAIN_SCENE = {"kind": "room", "n": 50, "extent": (40.0, 40.0, 8.0)}

# (radius_x, radius_y) of the training ellipses and the speeds flown on each
ELLIPSES = ((3.0, 3.0), (6.0, 6.0), (7.0, 4.5), (10.0, 6.0))
SPEEDS = (1.0, 2.0, 3.0, 4.0, 6.0, 8.0, 10.0)
# (a, b, period) of the figure-eight flights
LEMNISCATES = ((6.0, 4.0, 4.0), (6.0, 4.0, 6.0), (6.0, 4.0, 9.0), (3.0, 2.0, 5.0), (3.0, 2.0, 9.0))


def training_flights(max_speed: float = 10.0, thrust_bias: float = 1.0, aero: AeroConfig = DRAG_AERO,
                     duration: float = 15.0, seed: int = 100) -> list[FlightSpec]:
    """Ellipses and figure-eights up to ``max_speed`` without wind or external force.

    The vertical oscillation is reduced on tight fast ellipses so the
    reference never asks for negative thrust.
    """
    base = FlightSpec("train", aero=aero, noise=TRAIN_NOISE, duration=duration, thrust_bias=thrust_bias,
                      scene=dict(TRAIN_SCENE))
    specs = []
    for rx, ry in ELLIPSES:
        for s in SPEEDS:
            if s > max_speed:
                continue
            za = min(0.3, 4.0 / (2.0 * s / min(rx, ry)) ** 2)
            specs.append(base.with_(params=dict(radius=rx, radius_y=ry, speed=s, height=2.0, z_amplitude=za)))
    for a, b, period in LEMNISCATES:
        # peak speed of the figure-eight is 2 pi a / period along x
        if 2.0 * np.pi * a / period <= 1.2 * max_speed:
            specs.append(base.with_(trajectory="lemniscate", params=dict(a=a, b=b, period=period, height=2.0)))
    return [s.with_(name=f"train-{k:02d}", seed=seed + k) for k, s in enumerate(specs)]


def training_samples(specs: list[FlightSpec]) -> list:
    samples = []
    for spec in specs:
        log, truth = fly(spec)
        samples += samples_from_log(log, truth)
    return samples


def training_hash(specs: list[FlightSpec], cfg: TrainConfig, model_seed: int = 0) -> str:
    doc = {"flights": [s.to_dict() for s in specs], "train": cfg.hash(), "model_seed": model_seed}
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]


def trained_model(specs: list[FlightSpec], cfg: TrainConfig, cache_dir=None, tag: str = "tcn", model_seed: int = 0,
                  log=None):
    """Train a TCN on ``specs`` or reuse a cached file with the same training hash.

    Returns ``(model, info)`` where ``info`` holds the hash, the model path
    and, when trained here, the loss curves.
    """
    h = training_hash(specs, cfg, model_seed)
    path = None
    if cache_dir is not None:
        path = Path(cache_dir) / f"{tag}-{h}.json"
        if path.exists():
            try:
                return load_model(path), {"hash": h, "path": str(path), "cached": True}
            except ModelFileError:
                pass  # corrupt cache entry: retrain and overwrite
    model = TCNModel(seed=model_seed)
    res = train(model, training_samples(specs), cfg, log=log)
    info = {"hash": h, "path": None if path is None else str(path), "cached": False,
            "train_loss": res.train_loss, "val_loss": res.val_loss, "best_epoch": res.best_epoch,
            "seconds": res.seconds}
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        save_model(model, path, train_seed=cfg.seed, config_hash=h)
    return model, info
