"""Configuration types for the quadrotor simulator."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.ndimage import gaussian_filter, map_coordinates, spline_filter


def _vec3(x) -> np.ndarray:
    a = np.asarray(x, dtype=float).reshape(3)
    return a


@dataclass
class WorldConfig:
    """Environment constants.

    ``external_force`` is a constant world-frame push in Newtons (a tether
    or hand pull) that counts as external disturbance, like wind.
    """

    gravity: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -9.81]))
    mass: float = 1.0
    air_density: float = 1.225
    rng_seed: int = 0
    external_force: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.gravity = _vec3(self.gravity)
        self.external_force = _vec3(self.external_force)
        if self.mass <= 0:
            raise ValueError("mass must be positive")
        if self.air_density <= 0:
            raise ValueError("air_density must be positive")
        g = np.linalg.norm(self.gravity)
        if not 9.0 <= g <= 10.5:
            raise ValueError(f"gravity magnitude {g:.3f} outside [9.0, 10.5]")


@dataclass
class AeroConfig:
    """Aerodynamic coefficients of the airframe.

    ``linear_drag`` is an optional body-frame matrix D (N s/m) producing
    ``-D v_rel`` and is used for controlled linear-drag worlds.
    """

    fuselage_area: float = 0.0
    fuselage_cd: float = 2.0
    induced_drag_k: float = 0.0
    board_area: float = 0.0
    board_normal: np.ndarray = field(default_factory=lambda: np.array([0.0, 1.0, 0.0]))
    linear_drag: Optional[np.ndarray] = None

    def __post_init__(self):
        self.board_normal = _vec3(self.board_normal)
        if self.fuselage_area < 0 or self.board_area < 0:
            raise ValueError("areas must be non-negative")
        if self.fuselage_cd < 0:
            raise ValueError("fuselage_cd must be non-negative")
        if self.induced_drag_k < 0:
            raise ValueError("induced_drag_k must be non-negative")
        if self.board_area > 0 and abs(np.linalg.norm(self.board_normal) - 1.0) > 1e-9:
            raise ValueError("board_normal must be a unit vector")
        if self.linear_drag is not None:
            self.linear_drag = np.asarray(self.linear_drag, dtype=float).reshape(3, 3)

    @property
    def is_zero(self) -> bool:
        return (
            (self.fuselage_area == 0 or self.fuselage_cd == 0)
            and self.induced_drag_k == 0
            and self.board_area == 0
            and (self.linear_drag is None or not np.any(self.linear_drag))
        )


class WindField:
    """Wind velocity field in the world frame.

    ``kind`` is one of ``none``, ``constant`` or ``smoothed-grid``. Grid
    samples are Gaussian-smoothed and interpolated with cubic splines; the
    field is zero outside the grid hull, so the outermost samples should be
    zero for a continuous field (``patch`` takes care of that). Grid axes
    must be uniformly spaced.
    """

    KINDS = ("none", "constant", "smoothed-grid")

    def __init__(self, kind: str = "none", constant_vector=None, grid_axes=None,
                 grid_values=None, smoothing: float = 1.0, ramp_time: float = 0.0):
        if kind not in self.KINDS:
            raise ValueError(f"unknown wind kind {kind!r}")
        self.kind = kind
        self.constant_vector = _vec3(constant_vector if constant_vector is not None else np.zeros(3))
        self.ramp_time = float(ramp_time)
        self.smoothing = float(smoothing)
        self.grid_axes = None
        self.grid_values = None
        self._coeffs = None
        if kind == "smoothed-grid":
            if grid_axes is None or grid_values is None:
                raise ValueError("smoothed-grid wind needs grid_axes and grid_values")
            axes = tuple(np.asarray(a, dtype=float) for a in grid_axes)
            values = np.asarray(grid_values, dtype=float)
            if values.shape != tuple(len(a) for a in axes) + (3,):
                raise ValueError("grid_values shape does not match grid axes")
            if not np.all(np.isfinite(values)):
                raise ValueError("wind grid contains non-finite samples")
            if self.smoothing > 0:
                values = np.stack(
                    [gaussian_filter(values[..., i], self.smoothing, mode="constant") for i in range(3)],
                    axis=-1,
                )
            for a in axes:
                if len(a) < 2 or np.any(np.abs(np.diff(a) - (a[1] - a[0])) > 1e-9 * max(1.0, abs(a[1] - a[0]))):
                    raise ValueError("wind grid axes must be uniformly spaced")
            self.grid_axes = axes
            self.grid_values = values
            self._coeffs = [spline_filter(values[..., i], order=3, mode="nearest") for i in range(3)]

    @classmethod
    def none(cls) -> "WindField":
        return cls("none")

    @classmethod
    def constant(cls, vector, ramp_time: float = 0.0) -> "WindField":
        return cls("constant", constant_vector=vector, ramp_time=ramp_time)

    @classmethod
    def patch(cls, center, half_extent, vector, spacing: float = 0.25,
              margin: float = 1.0, smoothing: float = 1.5, ramp_time: float = 0.0) -> "WindField":
        """Box-shaped region of constant wind with smoothed edges."""
        center = _vec3(center)
        half = _vec3(half_extent)
        lo, hi = center - half - margin, center + half + margin
        axes = [np.arange(lo[i], hi[i] + 0.5 * spacing, spacing) for i in range(3)]
        X, Y, Z = np.meshgrid(*axes, indexing="ij")
        inside = (
            (np.abs(X - center[0]) <= half[0])
            & (np.abs(Y - center[1]) <= half[1])
            & (np.abs(Z - center[2]) <= half[2])
        )
        values = inside[..., None] * _vec3(vector)
        return cls("smoothed-grid", grid_axes=axes, grid_values=values,
                   smoothing=smoothing, ramp_time=ramp_time)

    def velocity(self, p, t: float = 0.0) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        scale = 1.0 if self.ramp_time <= 0 else min(1.0, max(0.0, t / self.ramp_time))
        if self.kind == "none":
            w = np.zeros(p.shape)
        elif self.kind == "constant":
            w = np.broadcast_to(self.constant_vector, p.shape).copy()
        else:
            w = self._grid_sample(p.reshape(-1, 3)).reshape(p.shape)
        w = scale * w
        if not np.all(np.isfinite(w)):
            raise ValueError("wind sample is NaN")
        return w

    def _grid_sample(self, pts: np.ndarray) -> np.ndarray:
        coords = np.empty((3, len(pts)))
        inside = np.ones(len(pts), dtype=bool)
        for i, a in enumerate(self.grid_axes):
            coords[i] = (pts[:, i] - a[0]) / (a[1] - a[0])
            inside &= (pts[:, i] >= a[0]) & (pts[:, i] <= a[-1])
        out = np.zeros((len(pts), 3))
        if inside.any():
            c = coords[:, inside]
            for k in range(3):
                out[inside, k] = map_coordinates(self._coeffs[k], c, order=3, prefilter=False, mode="nearest")
        return out

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "constant_vector": self.constant_vector.tolist(),
             "ramp_time": self.ramp_time, "smoothing": self.smoothing}
        if self.kind == "smoothed-grid":
            d["grid_axes"] = [a.tolist() for a in self.grid_axes]
        return d


@dataclass
class SensorNoiseConfig:
    """Sensor noise levels and rates.

    White-noise sigmas are per-sample standard deviations; bias random-walk
    sigmas are continuous-time densities (unit/sqrt(s)).
    """

    gyro_noise: float = 0.0
    gyro_bias_walk: float = 0.0
    accel_noise: float = 0.0
    accel_bias_walk: float = 0.0
    thrust_noise: float = 0.0
    pixel_noise: float = 0.0
    imu_rate: float = 100.0
    thrust_rate: float = 100.0
    cam_rate: float = 10.0
    gyro_bias0: np.ndarray = field(default_factory=lambda: np.zeros(3))
    accel_bias0: np.ndarray = field(default_factory=lambda: np.zeros(3))
    max_features: Optional[int] = None
    seed: int = 0

    def __post_init__(self):
        self.gyro_bias0 = _vec3(self.gyro_bias0)
        self.accel_bias0 = _vec3(self.accel_bias0)
        for name in ("gyro_noise", "gyro_bias_walk", "accel_noise", "accel_bias_walk",
                     "thrust_noise", "pixel_noise"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if min(self.imu_rate, self.thrust_rate, self.cam_rate) <= 0:
            raise ValueError("rates must be positive")
        if self.imu_rate < self.cam_rate:
            raise ValueError("imu_rate must be at least cam_rate")

    @classmethod
    def noiseless(cls, **kw) -> "SensorNoiseConfig":
        return cls(**kw)


@dataclass
class Camera:
    """Pinhole camera rigidly attached to the body.

    ``R_bc``/``t_bc`` give the camera frame expressed in the body frame
    (x right, y down, z along the optical axis).
    """

    fx: float = 320.0
    fy: float = 320.0
    cx: float = 320.0
    cy: float = 240.0
    width: int = 640
    height: int = 480
    R_bc: np.ndarray = field(default_factory=lambda: forward_camera_rotation(0.0))
    t_bc: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.R_bc = np.asarray(self.R_bc, dtype=float).reshape(3, 3)
        self.t_bc = _vec3(self.t_bc)
        if self.fx <= 0 or self.fy <= 0 or self.width <= 0 or self.height <= 0:
            raise ValueError("invalid pinhole intrinsics")
        if np.abs(self.R_bc @ self.R_bc.T - np.eye(3)).max() > 1e-9:
            raise ValueError("R_bc is not a rotation")

    def project(self, p_c: np.ndarray) -> np.ndarray:
        p_c = np.asarray(p_c, dtype=float)
        return np.stack([self.fx * p_c[..., 0] / p_c[..., 2] + self.cx,
                         self.fy * p_c[..., 1] / p_c[..., 2] + self.cy], axis=-1)

    def in_bounds(self, uv: np.ndarray) -> np.ndarray:
        return ((uv[..., 0] >= 0) & (uv[..., 0] < self.width)
                & (uv[..., 1] >= 0) & (uv[..., 1] < self.height))

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height,
                "R_bc": self.R_bc.tolist(), "t_bc": self.t_bc.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Camera":
        return cls(**d)


def forward_camera_rotation(pitch_down: float) -> np.ndarray:
    """Camera looking along body +x, tilted down by ``pitch_down`` radians."""
    base = np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])
    c, s = np.cos(pitch_down), np.sin(pitch_down)
    Ry = np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
    return Ry @ base
