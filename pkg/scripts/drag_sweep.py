"""Residual-model force error against flight speed on held-out circles.

Trains (or loads from ``--cache``) the full-speed model and prints, per
speed, the total-force RMSE of the zero model and of the trained network.
"""
from __future__ import annotations

import argparse

import numpy as np
import torch

from dynvio.experiments.flights import FlightSpec, fly
from dynvio.experiments.registry import FULL_TRAIN, force_prediction_errors
from dynvio.experiments.training import DRAG_AERO, TRAIN_NOISE, trained_model, training_flights
from dynvio.resmodel import ZeroModel


def force_rmse(model, log, truth) -> float:
    e = force_prediction_errors(model, log, truth)
    return float(np.sqrt(np.mean(np.sum(e ** 2, axis=1))))


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--cache", default="models")
    ap.add_argument("--speeds", default="1,2,4,6,8,10")
    args = ap.parse_args()
    torch.set_num_threads(1)
    model, info = trained_model(training_flights(), FULL_TRAIN, args.cache, tag="drag", log=print)
    print(f"model {info['hash']}")
    print("speed  zero_rmse  tcn_rmse")
    for s in (float(x) for x in args.speeds.split(",")):
        spec = FlightSpec(f"sweep-{s:g}", params=dict(radius=8.0, radius_y=5.0, speed=s, height=2.0),
                          aero=DRAG_AERO, noise=TRAIN_NOISE, duration=12.0, seed=321,
                          scene={"kind": "room", "n": 50, "extent": (40.0, 40.0, 8.0)})
        log, truth = fly(spec)
        print(f"{s:5.1f}  {force_rmse(ZeroModel(), log, truth):9.4f}  {force_rmse(model, log, truth):8.4f}")


if __name__ == "__main__":
    main()
