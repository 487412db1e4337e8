"""Euler preintegration of thrust-driven dynamics and IMU measurements."""
from __future__ import annotations

import numpy as np

from ..geometry import quat_exp, quat_mul, quat_to_rot, right_jacobian, skew
from .types import DynamicsNoiseParams, ImuNoiseParams, MeasurementBuffer, PreintegratedDelta

REPREINTEGRATION_THRESHOLD = 0.02  # rad/s


def step_quaternion(w: np.ndarray, dt: float) -> np.ndarray:
    """Unit quaternion of the Euler rotation increment ``[1, w dt / 2]``."""
    q = np.array([1.0, 0.5 * w[0] * dt, 0.5 * w[1] * dt, 0.5 * w[2] * dt])
    return q / np.sqrt(q @ q)


def step_rotation_jacobian(w: np.ndarray, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Rotation vector of the Euler increment and its derivative w.r.t. ``w``.

    The normalized increment rotates by ``2 atan(|w| dt / 2)`` about ``w``.
    """
    n = float(np.sqrt(w @ w))
    x = 0.5 * n * dt
    if x < 1e-4:
        c = dt * (1.0 - (n * dt) ** 2 / 12.0)
        c_over = -dt**3 / 6.0
    else:
        c = 2.0 * np.arctan(x) / n
        c_over = (dt / (1.0 + x * x) * n - 2.0 * np.arctan(x)) / n**3
    phi = c * w
    M = c * np.eye(3) + c_over * np.outer(w, w)
    return phi, M


def _resolve_fres(f_res, buf: MeasurementBuffer, bw_bar: np.ndarray) -> np.ndarray:
    n = len(buf)
    if f_res is None:
        return np.zeros((n, 3))
    if callable(f_res):
        f_res = f_res(buf, bw_bar)
    f_res = np.asarray(f_res, dtype=float)
    if f_res.shape == (3,):
        return np.broadcast_to(f_res, (n, 3))
    if f_res.shape != (n, 3):
        raise ValueError(f"residual force has shape {f_res.shape}, expected (3,) or ({n}, 3)")
    return f_res


def _propagate(forces: np.ndarray, gyro: np.ndarray, dts: np.ndarray, bw_bar: np.ndarray,
               sig_f: float, sig_w: float, sig_bw: float, sig_ba: float | None):
    imu = sig_ba is not None
    dim = 15 if imu else 12
    nb = 6 if imu else 3
    alpha = np.zeros(3)
    beta = np.zeros(3)
    gamma = np.array([1.0, 0.0, 0.0, 0.0])
    P = np.zeros((dim, dim))
    X = np.zeros((dim, nb))
    X[9:, :] = np.eye(nb)
    A = np.eye(dim)
    G = np.zeros((dim, 6))
    I3 = np.eye(3)
    for i in range(len(dts)):
        dt = dts[i]
        w = gyro[i] - bw_bar
        f = forces[i]
        R = quat_to_rot(gamma)
        dq = step_quaternion(w, dt)
        phi, M = step_rotation_jacobian(w, dt)
        dR = quat_to_rot(dq)
        JrM = right_jacobian(phi) @ M
        Rf_x = R @ skew(f)

        A[0:3, 3:6] = dt * I3
        A[0:3, 6:9] = -0.5 * dt * dt * Rf_x
        A[3:6, 6:9] = -dt * Rf_x
        A[6:9, 6:9] = dR.T
        A[6:9, 9:12] = -JrM
        if imu:
            A[0:3, 12:15] = -0.5 * dt * dt * R
            A[3:6, 12:15] = -dt * R
        G[0:3, 0:3] = -0.5 * dt * dt * R
        G[3:6, 0:3] = -dt * R
        G[6:9, 3:6] = -JrM
        Q = np.diag([sig_f**2] * 3 + [sig_w**2] * 3)
        P = A @ P @ A.T + G @ Q @ G.T
        P[9:12, 9:12] += sig_bw**2 * dt * I3
        if imu:
            P[12:15, 12:15] += sig_ba**2 * dt * I3
        X = A @ X

        Rf = R @ f
        alpha = alpha + beta * dt + 0.5 * Rf * dt * dt
        beta = beta + Rf * dt
        gamma = quat_mul(gamma, dq)
        gamma = gamma / np.sqrt(gamma @ gamma)
    P = 0.5 * (P + P.T)
    return alpha, beta, gamma, P, X


def preintegrate_dynamics(buf: MeasurementBuffer, bw_bar, f_res=None,
                          noise: DynamicsNoiseParams | None = None) -> PreintegratedDelta:
    """Preintegrate collective thrust plus residual force over ``buf``.

    ``f_res`` is ``None`` (zero), a body-frame 3-vector, an ``(n, 3)`` array
    of per-step residuals or a callable ``f(buf, bw_bar)`` returning either.
    """
    if buf.thrust is None:
        raise ValueError("dynamics preintegration needs thrust samples")
    noise = noise or DynamicsNoiseParams()
    bw_bar = np.asarray(bw_bar, dtype=float).reshape(3)
    if not np.all(np.isfinite(bw_bar)):
        raise ValueError("non-finite gyro bias")
    fres = _resolve_fres(f_res, buf, bw_bar)
    forces = fres.copy()
    forces[:, 2] = forces[:, 2] + buf.thrust
    if not np.all(np.isfinite(forces)):
        raise ValueError("NaN in residual force")
    dts = buf.dts
    alpha, beta, gamma, P, X = _propagate(forces, buf.gyro, dts, bw_bar,
                                          noise.sigma_ft, noise.sigma_w, noise.sigma_bw, None)
    return PreintegratedDelta(
        "dynamics", alpha, beta, gamma, float(dts.sum()), P,
        X[0:3, 0:3], X[3:6, 0:3], X[6:9, 0:3], bw_bar, n_steps=len(dts), noise=noise,
    )


def preintegrate_imu(buf: MeasurementBuffer, bw_bar, ba_bar, noise: ImuNoiseParams | None = None) -> PreintegratedDelta:
    if buf.accel is None:
        raise ValueError("imu preintegration needs accelerometer samples")
    noise = noise or ImuNoiseParams()
    bw_bar = np.asarray(bw_bar, dtype=float).reshape(3)
    ba_bar = np.asarray(ba_bar, dtype=float).reshape(3)
    if not (np.all(np.isfinite(bw_bar)) and np.all(np.isfinite(ba_bar))):
        raise ValueError("non-finite bias")
    dts = buf.dts
    alpha, beta, gamma, P, X = _propagate(buf.accel - ba_bar, buf.gyro, dts, bw_bar,
                                          noise.sigma_a, noise.sigma_w, noise.sigma_bw, noise.sigma_ba)
    return PreintegratedDelta(
        "imu", alpha, beta, gamma, float(dts.sum()), P,
        X[0:3, 0:3], X[3:6, 0:3], X[6:9, 0:3], bw_bar,
        J_alpha_ba=X[0:3, 3:6], J_beta_ba=X[3:6, 3:6], ba_bar=ba_bar, n_steps=len(dts), noise=noise,
    )


def correct_bias_change(delta: PreintegratedDelta, bw_new, ba_new=None):
    """First-order correction of the preintegrated terms for new bias estimates."""
    dbw = np.asarray(bw_new, dtype=float) - delta.bw_bar
    alpha = delta.alpha + delta.J_alpha_bw @ dbw
    beta = delta.beta + delta.J_beta_bw @ dbw
    if delta.kind == "imu" and ba_new is not None:
        dba = np.asarray(ba_new, dtype=float) - delta.ba_bar
        alpha = alpha + delta.J_alpha_ba @ dba
        beta = beta + delta.J_beta_ba @ dba
    gamma = quat_mul(delta.gamma, quat_exp(delta.J_gamma_bw @ dbw))
    return alpha, beta, gamma


def needs_repreintegration(delta: PreintegratedDelta, bw_new, threshold: float = REPREINTEGRATION_THRESHOLD) -> bool:
    return float(np.linalg.norm(np.asarray(bw_new) - delta.bw_bar)) > threshold


def force_sensitivity(buf: MeasurementBuffer, bw_bar, segments: list[tuple[int, int]]):
    """Sensitivity of the preintegrated position/velocity to piecewise-constant residual forces.

    For segment ``j`` covering steps ``[s, e)`` returns 3x3 matrices ``A_j``,
    ``B_j`` with ``d alpha / d f_j = A_j`` and ``d beta / d f_j = B_j``.
    Rotations do not depend on the force, so the relation is exact.
    """
    bw_bar = np.asarray(bw_bar, dtype=float).reshape(3)
    dts = buf.dts
    n = len(dts)
    gamma = np.array([1.0, 0.0, 0.0, 0.0])
    Rs = np.empty((n, 3, 3))
    for i in range(n):
        Rs[i] = quat_to_rot(gamma)
        gamma = quat_mul(gamma, step_quaternion(buf.gyro[i] - bw_bar, dts[i]))
        gamma = gamma / np.sqrt(gamma @ gamma)
    remaining = np.concatenate([np.cumsum(dts[::-1])[::-1][1:], [0.0]])
    wa = 0.5 * dts**2 + dts * remaining
    A = np.zeros((len(segments), 3, 3))
    B = np.zeros((len(segments), 3, 3))
    for j, (s, e) in enumerate(segments):
        A[j] = np.einsum("i,ijk->jk", wa[s:e], Rs[s:e])
        B[j] = np.einsum("i,ijk->jk", dts[s:e], Rs[s:e])
    return A, B
