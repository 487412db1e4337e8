"""Reference trajectories: position, velocity, acceleration and yaw over time."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.interpolate import make_interp_spline

KINDS = ("circle", "lemniscate", "hover", "gp-random")


@dataclass
class Reference:
    kind: str
    params: dict
    duration: float
    dt: float
    fn: Callable[[float], tuple] = field(repr=False)
    yaw_mode: str = "tangent"
    fixed_yaw: float = 0.0

    def kinematics(self, t: float):
        """Position, velocity and acceleration at time ``t``."""
        return self.fn(t)

    def yaw(self, t: float) -> float:
        if self.yaw_mode == "fixed":
            return self.fixed_yaw
        _, v, _ = self.fn(t)
        if np.hypot(v[0], v[1]) < 1e-6:
            return self.fixed_yaw
        return float(np.arctan2(v[1], v[0]))

    @property
    def times(self) -> np.ndarray:
        n = int(round(self.duration / self.dt))
        return np.arange(n + 1) * self.dt

    @property
    def positions(self) -> np.ndarray:
        return np.array([self.fn(t)[0] for t in self.times])

    @property
    def yaws(self) -> np.ndarray:
        return np.array([self.yaw(t) for t in self.times])

    def max_speed(self, n: int = 2000) -> float:
        ts = np.linspace(0.0, self.duration, n)
        return float(max(np.linalg.norm(self.fn(t)[1]) for t in ts))


def _circle(p: dict):
    r = float(p.get("radius", 1.0))
    ry = float(p.get("radius_y", r))
    h = float(p.get("height", 1.0))
    c = np.asarray(p.get("center", (0.0, 0.0)), dtype=float)
    if "speed" in p:
        w = float(p["speed"]) / r
    else:
        w = 2.0 * np.pi / float(p.get("period", 2.0 * np.pi))
    ph = float(p.get("phase", 0.0))
    za = float(p.get("z_amplitude", 0.0))
    zm = float(p.get("z_multiple", 2.0))

    def fn(t):
        a = w * t + ph
        pos = np.array([c[0] + r * np.cos(a), c[1] + ry * np.sin(a), h + za * np.sin(zm * a)])
        vel = np.array([-r * w * np.sin(a), ry * w * np.cos(a), za * zm * w * np.cos(zm * a)])
        acc = np.array([-r * w * w * np.cos(a), -ry * w * w * np.sin(a),
                        -za * (zm * w) ** 2 * np.sin(zm * a)])
        return pos, vel, acc

    return fn


def _lemniscate(p: dict):
    a_ = float(p.get("a", 2.0))
    b_ = float(p.get("b", a_))
    h = float(p.get("height", 1.0))
    c = np.asarray(p.get("center", (0.0, 0.0)), dtype=float)
    w = 2.0 * np.pi / float(p.get("period", 2.0 * np.pi))
    ph = float(p.get("phase", 0.0))

    def fn(t):
        s = w * t + ph
        pos = np.array([c[0] + a_ * np.sin(s), c[1] + 0.5 * b_ * np.sin(2 * s), h])
        vel = np.array([a_ * w * np.cos(s), b_ * w * np.cos(2 * s), 0.0])
        acc = np.array([-a_ * w * w * np.sin(s), -2 * b_ * w * w * np.sin(2 * s), 0.0])
        return pos, vel, acc

    return fn


def _hover(p: dict):
    pos0 = np.asarray(p.get("position", (0.0, 0.0, 1.0)), dtype=float)

    def fn(t):
        return pos0.copy(), np.zeros(3), np.zeros(3)

    return fn


def _gp_random(p: dict, duration: float, seed: int):
    if "length_scale" not in p or "variance" not in p:
        raise ValueError("gp-random needs length_scale and variance")
    ell = float(p["length_scale"])
    var = float(p["variance"])
    center = np.asarray(p.get("center", (0.0, 0.0, 1.5)), dtype=float)
    z_scale = float(p.get("z_scale", 0.3))
    max_speed = p.get("max_speed")
    rng = np.random.default_rng(seed)
    step = ell / 4.0
    knots = np.arange(-2 * step, duration + 3 * step, step)
    d = knots[:, None] - knots[None, :]
    K = var * np.exp(-0.5 * (d / ell) ** 2) + 1e-9 * var * np.eye(len(knots))
    L = np.linalg.cholesky(K)
    samples = L @ rng.standard_normal((len(knots), 3))
    samples[:, 2] *= z_scale
    spline = make_interp_spline(knots, samples, k=5)
    d1, d2 = spline.derivative(1), spline.derivative(2)
    scale = 1.0
    if max_speed is not None:
        ts = np.linspace(0.0, duration, max(200, int(duration * 100)))
        vmax = np.linalg.norm(d1(ts), axis=1).max()
        if vmax > 0:
            scale = float(max_speed) / vmax

    def fn(t):
        return center + scale * spline(t), scale * d1(t), scale * d2(t)

    return fn


def generate_trajectory(kind: str, params: dict | None, duration: float, dt: float,
                        seed: int = 0) -> Reference:
    """Build a smooth reference trajectory.

    ``params`` may set ``yaw`` to ``"tangent"`` (default for moving kinds),
    ``"fixed"`` or a number (fixed yaw in radians).
    """
    if kind not in KINDS:
        raise ValueError(f"unknown trajectory kind {kind!r}")
    if duration <= 0 or dt <= 0:
        raise ValueError("duration and dt must be positive")
    params = dict(params or {})
    if kind == "circle":
        fn = _circle(params)
    elif kind == "lemniscate":
        fn = _lemniscate(params)
    elif kind == "hover":
        fn = _hover(params)
    else:
        fn = _gp_random(params, duration, seed)
    yaw = params.get("yaw", "fixed" if kind == "hover" else "tangent")
    if isinstance(yaw, str):
        if yaw not in ("tangent", "fixed"):
            raise ValueError(f"unknown yaw mode {yaw!r}")
        mode, fixed = yaw, float(params.get("fixed_yaw", 0.0))
    else:
        mode, fixed = "fixed", float(yaw)
    return Reference(kind, params, float(duration), float(dt), fn, mode, fixed)
