"""Declarative flight descriptions turned into sensor logs and ground truth."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace

import numpy as np

from ..sim import (AeroConfig, Camera, SensorNoiseConfig, WindField, WorldConfig, forward_camera_rotation,
                   generate_trajectory, make_scene, simulate, synthesize_sensors)


@dataclass
class FlightSpec:
    """Everything needed to reproduce one synthetic flight."""

    name: str
    trajectory: str = "circle"
    params: dict = field(default_factory=dict)
    duration: float = 10.0
    dt: float = 0.01
    seed: int = 0
    world: WorldConfig = field(default_factory=WorldConfig)
    aero: AeroConfig = field(default_factory=AeroConfig)
    wind: WindField = field(default_factory=WindField.none)
    noise: SensorNoiseConfig = field(default_factory=SensorNoiseConfig)
    thrust_bias: float = 1.0
    scene: dict = field(default_factory=lambda: {"kind": "room", "n": 400, "extent": (30.0, 30.0, 8.0)})
    camera_pitch: float = 0.0
    max_depth: float = np.inf

    def with_(self, **kw) -> "FlightSpec":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        def clean(x):
            if isinstance(x, np.ndarray):
                return x.tolist()
            if isinstance(x, dict):
                return {k: clean(v) for k, v in x.items()}
            if isinstance(x, (list, tuple)):
                return [clean(v) for v in x]
            if isinstance(x, float) and not np.isfinite(x):
                return repr(x)
            return x
        return clean({
            "name": self.name, "trajectory": self.trajectory, "params": self.params, "duration": self.duration,
            "dt": self.dt, "seed": self.seed, "world": vars(self.world), "aero": vars(self.aero),
            "wind": self.wind.to_dict(), "noise": vars(self.noise), "thrust_bias": self.thrust_bias,
            "scene": self.scene, "camera_pitch": self.camera_pitch, "max_depth": self.max_depth,
        })

    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


def fly(spec: FlightSpec):
    """Simulate the flight and synthesize its sensors; returns ``(log, truth)``."""
    ref = generate_trajectory(spec.trajectory, spec.params, spec.duration, spec.dt, seed=spec.seed)
    truth = simulate(ref, spec.world, spec.aero, spec.wind, spec.dt)
    sc = dict(spec.scene)
    ids, pts = make_scene(sc.pop("kind", "room"), seed=sc.pop("seed", 0), **sc)
    cam = Camera(R_bc=forward_camera_rotation(spec.camera_pitch))
    noise = replace(spec.noise, seed=spec.seed)
    log = synthesize_sensors(truth, noise, ids, pts, cam, thrust_bias=spec.thrust_bias, max_depth=spec.max_depth)
    return log, truth
