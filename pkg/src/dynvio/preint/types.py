from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..geometry import quat_identity, quat_normalize


@dataclass
class DroneState:
    """Per-node unknown of the estimator: pose, velocity, IMU biases, external force.

    ``f_e`` is the mass-normalized external force in the body frame.
    """

    p: np.ndarray = field(default_factory=lambda: np.zeros(3))
    q: np.ndarray = field(default_factory=quat_identity)
    v: np.ndarray = field(default_factory=lambda: np.zeros(3))
    b_a: np.ndarray = field(default_factory=lambda: np.zeros(3))
    b_w: np.ndarray = field(default_factory=lambda: np.zeros(3))
    f_e: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        for name in ("p", "v", "b_a", "b_w", "f_e"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float).reshape(3).copy())
        self.q = quat_normalize(np.asarray(self.q, dtype=float).reshape(4))
        if not all(np.all(np.isfinite(getattr(self, n))) for n in ("p", "q", "v", "b_a", "b_w", "f_e")):
            raise ValueError("non-finite drone state")

    def copy(self, **changes) -> "DroneState":
        return replace(self, **changes)


@dataclass(frozen=True)
class DynamicsNoiseParams:
    """Noise of the thrust-driven dynamics factor.

    ``sigma_ft`` and ``sigma_w`` are per-sample standard deviations,
    ``sigma_bw`` is the gyro bias random-walk density. ``w_f`` weights the
    zero-mean prior on the external force (default 1/5^2).
    """

    sigma_ft: float = 0.1
    sigma_w: float = 1e-3
    sigma_bw: float = 1e-4
    w_f: float = 1.0 / 25.0

    def __post_init__(self):
        for name in ("sigma_ft", "sigma_w", "sigma_bw", "w_f"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class ImuNoiseParams:
    sigma_a: float = 0.05
    sigma_w: float = 1e-3
    sigma_ba: float = 1e-3
    sigma_bw: float = 1e-4

    def __post_init__(self):
        for name in ("sigma_a", "sigma_w", "sigma_ba", "sigma_bw"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True, eq=False)
class MeasurementBuffer:
    """Gyro, thrust and accelerometer samples covering ``[t0, t1]``.

    Sample ``i`` is held over ``[tau_i, tau_{i+1})`` with ``tau_0 = t0`` and
    the last step ending at ``t1``. Thrust is already resampled onto the gyro
    timestamps (zero-order hold).
    """

    t0: float
    t1: float
    t: np.ndarray
    gyro: np.ndarray
    thrust: np.ndarray | None = None
    accel: np.ndarray | None = None
    nominal_dt: float = 0.01

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        if len(t) == 0:
            raise ValueError("empty measurement buffer")
        if np.any(np.diff(t) <= 0):
            raise ValueError("buffer samples not sorted")
        if self.t1 <= self.t0:
            raise ValueError("buffer interval must have positive length")
        for name in ("gyro", "thrust", "accel"):
            a = getattr(self, name)
            if a is not None and not np.all(np.isfinite(a)):
                raise ValueError(f"NaN in {name} measurements")
        d = self.dts
        tol = 1e-9
        if t[0] - self.t0 > 2 * self.nominal_dt + tol or np.any(d > 2 * self.nominal_dt + tol) or np.any(d <= 0):
            raise ValueError("gap in sensor coverage")

    @property
    def dts(self) -> np.ndarray:
        tau = np.concatenate([[self.t0], np.asarray(self.t)[1:], [self.t1]])
        return np.diff(tau)

    @property
    def duration(self) -> float:
        return self.t1 - self.t0

    def __len__(self) -> int:
        return len(self.t)

    def shifted(self, dt: float) -> "MeasurementBuffer":
        return replace(self, t0=self.t0 + dt, t1=self.t1 + dt, t=np.asarray(self.t) + dt)

    @classmethod
    def from_streams(cls, t0: float, t1: float, imu_t, gyro, thrust_t=None, thrust=None,
                     accel=None, nominal_dt: float | None = None, tol: float = 1e-9) -> "MeasurementBuffer":
        imu_t = np.asarray(imu_t, dtype=float)
        m = (imu_t >= t0 - tol) & (imu_t < t1 - tol)
        ts = imu_t[m]
        if len(ts) == 0:
            raise ValueError(f"no IMU samples in [{t0}, {t1})")
        if nominal_dt is None:
            nominal_dt = float(np.median(np.diff(imu_t))) if len(imu_t) > 1 else t1 - t0
        th = None
        if thrust is not None:
            thrust_t = np.asarray(thrust_t, dtype=float)
            k = np.searchsorted(thrust_t, ts + tol, side="right") - 1
            if np.any(k < 0):
                raise ValueError("no thrust sample before buffer start")
            th = np.asarray(thrust, dtype=float)[k]
        acc = None if accel is None else np.asarray(accel, dtype=float)[m]
        return cls(float(t0), float(t1), ts, np.asarray(gyro, dtype=float)[m], th, acc, nominal_dt)

    @classmethod
    def from_log(cls, log, t0: float, t1: float) -> "MeasurementBuffer":
        return cls.from_streams(t0, t1, log.imu_t, log.gyro, log.thrust_t, log.thrust, log.accel)


@dataclass(frozen=True, eq=False)
class PreintegratedDelta:
    """Accumulated relative motion over one inter-state interval.

    Covariance ordering is (alpha, beta, theta, b_w) for the dynamics kind
    and (alpha, beta, theta, b_w, b_a) for the imu kind.
    """

    kind: str
    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    dt: float
    P: np.ndarray
    J_alpha_bw: np.ndarray
    J_beta_bw: np.ndarray
    J_gamma_bw: np.ndarray
    bw_bar: np.ndarray
    J_alpha_ba: np.ndarray | None = None
    J_beta_ba: np.ndarray | None = None
    ba_bar: np.ndarray | None = None
    n_steps: int = 0
    noise: object = None
