"""Point-mass quadrotor flight with aerodynamic drag and wind."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..geometry import quat_log, quat_mul, quat_conj, rot_to_quat
from .config import AeroConfig, WindField, WorldConfig
from .trajectory import Reference

E3 = np.array([0.0, 0.0, 1.0])


def flat_plate_coefficients(angle_of_attack: float) -> tuple[float, float]:
    """Lift and drag coefficients of a flat plate at high angle of attack."""
    return float(np.sin(2.0 * angle_of_attack)), float(2.0 * np.sin(angle_of_attack) ** 2)


def aero_force_world(v_rel: np.ndarray, R: np.ndarray, aero: AeroConfig, world: WorldConfig) -> np.ndarray:
    """Aerodynamic force in Newtons, world frame, for relative air velocity ``v_rel``.

    ``v_rel`` is the vehicle velocity minus the wind velocity.
    """
    v_rel = np.asarray(v_rel, dtype=float)
    speed = np.linalg.norm(v_rel)
    f = np.zeros(3)
    if speed == 0.0:
        return f
    rho = world.air_density
    vhat = v_rel / speed
    if aero.fuselage_area > 0:
        f -= 0.5 * rho * aero.fuselage_area * aero.fuselage_cd * speed**2 * vhat
    if aero.induced_drag_k > 0:
        f -= aero.induced_drag_k * v_rel
    if aero.board_area > 0:
        n = R @ aero.board_normal
        cos_nv = float(n @ vhat)
        aoa = float(np.arcsin(min(1.0, abs(cos_nv))))
        cl, cd = flat_plate_coefficients(aoa)
        q = 0.5 * rho * aero.board_area * speed**2
        f -= q * cd * vhat
        u = -np.sign(cos_nv) * n
        lift_dir = u - (u @ vhat) * vhat
        ln = np.linalg.norm(lift_dir)
        if ln > 1e-12:
            f += q * cl * lift_dir / ln
    if aero.linear_drag is not None:
        f -= R @ (aero.linear_drag @ (R.T @ v_rel))
    return f


def aero_specific_force_body(v_rel, R, aero, world) -> np.ndarray:
    """Mass-normalized aerodynamic force in the body frame (m/s^2)."""
    return R.T @ aero_force_world(v_rel, R, aero, world) / world.mass


def attitude_from_thrust_direction(z_b: np.ndarray, yaw: float) -> np.ndarray:
    x_c = np.array([np.cos(yaw), np.sin(yaw), 0.0])
    y_b = np.cross(z_b, x_c)
    y_b /= np.linalg.norm(y_b)
    x_b = np.cross(y_b, z_b)
    return np.column_stack([x_b, y_b, z_b])


def flat_inputs(acc: np.ndarray, vel: np.ndarray, pos: np.ndarray, yaw: float, t: float,
                world: WorldConfig, aero: AeroConfig, wind: WindField,
                max_iter: int = 50, tol: float = 1e-13):
    """Collective thrust and attitude that realise ``acc`` under aero + wind.

    Returns ``(T, R)`` with ``T`` the mass-normalized thrust. Raises
    ``ValueError`` when the reference would need negative thrust.
    """
    w = wind.velocity(pos, t)
    v_rel = vel - w
    R = None
    z_b = acc - world.gravity
    for _ in range(max_iter):
        if z_b[2] <= 0 or np.linalg.norm(z_b) < 1e-9:
            raise ValueError(f"infeasible reference at t={t:.3f}: negative thrust demand")
        R_new = attitude_from_thrust_direction(z_b / np.linalg.norm(z_b), yaw)
        f_aero = (aero_force_world(v_rel, R_new, aero, world) + world.external_force) / world.mass
        z_new = acc - world.gravity - f_aero
        done = R is not None and np.abs(R_new - R).max() < tol
        R, z_b = R_new, z_new
        if done:
            break
    if z_b[2] <= 0:
        raise ValueError(f"infeasible reference at t={t:.3f}: negative thrust demand")
    T = float(z_b @ R[:, 2])
    if T < 0:
        raise ValueError(f"infeasible reference at t={t:.3f}: negative thrust demand")
    return T, R


def rk4_step(deriv, t: float, p: np.ndarray, v: np.ndarray, dt: float):
    k1p, k1v = deriv(t, p, v)
    k2p, k2v = deriv(t + 0.5 * dt, p + 0.5 * dt * k1p, v + 0.5 * dt * k1v)
    k3p, k3v = deriv(t + 0.5 * dt, p + 0.5 * dt * k2p, v + 0.5 * dt * k2v)
    k4p, k4v = deriv(t + dt, p + dt * k3p, v + dt * k3v)
    return (p + dt / 6.0 * (k1p + 2 * k2p + 2 * k3p + k4p),
            v + dt / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v))


def point_mass_accel(R: np.ndarray, thrust: float, f_body: np.ndarray, gravity: np.ndarray) -> np.ndarray:
    """World acceleration of the point-mass model for body specific force ``f_body``."""
    return R @ (thrust * E3 + f_body) + gravity


@dataclass
class GroundTruthSample:
    t: float
    p: np.ndarray
    v: np.ndarray
    q: np.ndarray
    f_e_true: np.ndarray
    f_aero_true: np.ndarray


@dataclass(eq=False)
class GroundTruth:
    """Ground-truth trajectory sampled on a uniform clock.

    Besides the exported fields this carries the true collective thrust,
    body rates and specific force needed to synthesize sensors.
    """

    t: np.ndarray
    p: np.ndarray
    v: np.ndarray
    q: np.ndarray
    f_e: np.ndarray
    f_aero: np.ndarray
    thrust: np.ndarray | None = None
    omega: np.ndarray | None = None
    specific_force: np.ndarray | None = None
    mass: float = 1.0

    def __len__(self) -> int:
        return len(self.t)

    def __getitem__(self, i: int) -> GroundTruthSample:
        return GroundTruthSample(float(self.t[i]), self.p[i], self.v[i], self.q[i], self.f_e[i], self.f_aero[i])

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def rotations(self) -> np.ndarray:
        from ..geometry import quat_to_rot
        return quat_to_rot(self.q)

    def index_of(self, t: float, tol: float = 1e-6) -> int:
        i = int(np.searchsorted(self.t, t - tol))
        if i >= len(self.t) or abs(self.t[i] - t) > tol:
            raise KeyError(f"no ground-truth sample at t={t}")
        return i

    def slice(self, t0: float, t1: float) -> "GroundTruth":
        m = (self.t >= t0 - 1e-9) & (self.t <= t1 + 1e-9)
        opt = lambda a: None if a is None else a[m]
        return GroundTruth(self.t[m], self.p[m], self.v[m], self.q[m], self.f_e[m], self.f_aero[m],
                           opt(self.thrust), opt(self.omega), opt(self.specific_force), self.mass)


def _body_rate(R_minus: np.ndarray, R_plus: np.ndarray, h: float) -> np.ndarray:
    dq = quat_mul(quat_conj(rot_to_quat(R_minus)), rot_to_quat(R_plus))
    return quat_log(dq) / (2.0 * h)


def simulate(reference: Reference, world: WorldConfig, aero: AeroConfig, wind: WindField,
             dt: float, duration: float | None = None, rate_step: float = 1e-5) -> GroundTruth:
    """Fly ``reference`` and integrate the translational dynamics with RK4.

    Thrust and attitude come from inverting the flat outputs of the
    reference; position and velocity are then integrated with the
    aerodynamic force evaluated on the integrated velocity.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    duration = reference.duration if duration is None else duration
    n = int(round(duration / dt)) + 1
    ts = np.arange(n) * dt
    g = world.gravity
    cache: dict[float, tuple] = {}
    push = world.external_force / world.mass
    push_body = (lambda R: R.T @ push) if np.any(push) else (lambda R: 0.0)

    def inputs(t):
        key = round(t, 12)
        if key not in cache:
            p_r, v_r, a_r = reference.kinematics(t)
            cache[key] = flat_inputs(a_r, v_r, p_r, reference.yaw(t), t, world, aero, wind)
        return cache[key]

    def aero_on_off(p, v, R, t):
        w = wind.velocity(p, t)
        on = aero_specific_force_body(v - w, R, aero, world) + push_body(R)
        off = aero_specific_force_body(v, R, aero, world)
        return on, off

    def deriv(t, p, v):
        T, R = inputs(t)
        on, _ = aero_on_off(p, v, R, t)
        return v, point_mass_accel(R, T, on, g)

    P = np.zeros((n, 3))
    V = np.zeros((n, 3))
    Q = np.zeros((n, 4))
    FE = np.zeros((n, 3))
    FA = np.zeros((n, 3))
    TH = np.zeros(n)
    W = np.zeros((n, 3))
    SF = np.zeros((n, 3))
    p, v, _ = reference.kinematics(0.0)
    p, v = p.astype(float), v.astype(float)
    for i, t in enumerate(ts):
        T, R = inputs(t)
        on, off = aero_on_off(p, v, R, t)
        P[i], V[i], Q[i] = p, v, rot_to_quat(R)
        FE[i], FA[i], TH[i] = on - off, off, T
        SF[i] = T * E3 + on
        yaw_m, yaw_p = reference.yaw(t - rate_step), reference.yaw(t + rate_step)
        pm, vm, am = reference.kinematics(t - rate_step)
        pp, vp, ap = reference.kinematics(t + rate_step)
        _, Rm = flat_inputs(am, vm, pm, yaw_m, t - rate_step, world, aero, wind)
        _, Rp = flat_inputs(ap, vp, pp, yaw_p, t + rate_step, world, aero, wind)
        W[i] = _body_rate(Rm, Rp, rate_step)
        if i + 1 < n:
            p, v = rk4_step(deriv, t, p, v, dt)
        if len(cache) > 64:
            cache.clear()
    return GroundTruth(ts, P, V, Q, FE, FA, TH, W, SF, world.mass)
