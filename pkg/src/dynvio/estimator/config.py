"""Configuration of the sliding-window estimator."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np

from ..preint.types import DynamicsNoiseParams, ImuNoiseParams

MODES = ("vio", "vimo", "vid-fusion", "hdvio")


@dataclass(frozen=True)
class SolverConfig:
    """Levenberg-Marquardt settings. ``damping`` is relative to the Hessian diagonal."""

    max_iters: int = 8
    damping: float = 1e-8
    damping_up: float = 10.0
    damping_down: float = 10.0
    min_diag: float = 1e-6
    tol_step: float = 1e-7
    tol_cost: float = 1e-6
    huber_px: float = 2.0
    w_f: float = 1.0 / 25.0
    mode: str = "hdvio"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.max_iters < 0:
            raise ValueError("max_iters must be >= 0")
        for name in ("damping", "damping_up", "damping_down", "tol_step", "tol_cost", "huber_px", "w_f"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class EstimatorConfig:
    """Window sizes, keyframing, noise models and the initial-state prior."""

    solver: SolverConfig = field(default_factory=SolverConfig)
    n_keyframes: int = 10
    n_states: int = 5
    keyframe_every: int = 2
    keyframe_parallax_px: float = 20.0
    pixel_sigma: float = 1.0
    min_parallax_deg: float = 1.0
    min_depth: float = 0.2
    imu: ImuNoiseParams = field(default_factory=ImuNoiseParams)
    dynamics: DynamicsNoiseParams = field(default_factory=DynamicsNoiseParams)
    gravity: tuple = (0.0, 0.0, -9.81)
    init_from_truth: bool = True
    # standard deviations of the prior on the first state
    prior_sigma_p: float = 1e-3
    prior_sigma_th: float = 1e-3
    prior_sigma_v: float = 0.05
    prior_sigma_ba: float = 0.1
    prior_sigma_bw: float = 0.01
    prior_sigma_fe: float = 5.0

    def __post_init__(self):
        if self.n_states < 2 or self.n_keyframes < 2:
            raise ValueError("need at least two states and two keyframes")
        if self.keyframe_every < 1:
            raise ValueError("keyframe_every must be >= 1")
        if self.pixel_sigma <= 0:
            raise ValueError("pixel_sigma must be positive")

    @property
    def mode(self) -> str:
        return self.solver.mode

    def with_mode(self, mode: str) -> "EstimatorConfig":
        from dataclasses import replace
        return replace(self, solver=replace(self.solver, mode=mode))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["gravity"] = list(self.gravity)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EstimatorConfig":
        d = dict(d)
        kw = {}
        if "solver" in d:
            kw["solver"] = SolverConfig(**d.pop("solver"))
        if "imu" in d:
            kw["imu"] = ImuNoiseParams(**d.pop("imu"))
        if "dynamics" in d:
            kw["dynamics"] = DynamicsNoiseParams(**d.pop("dynamics"))
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown estimator config keys {sorted(unknown)}")
        if "gravity" in d:
            d["gravity"] = tuple(float(x) for x in np.asarray(d["gravity"]).reshape(3))
        return cls(**kw, **d)
