"""Inertial and dynamics residuals between two drone states, with analytic Jacobians."""
from __future__ import annotations

import warnings

import numpy as np

from ..geometry import quat_conj, quat_exp, quat_log, quat_mul, quat_to_rot, right_jacobian, right_jacobian_inv, skew
from .integrate import correct_bias_change
from .types import DroneState, PreintegratedDelta

STATE_BLOCKS = ("p", "th", "v", "ba", "bw", "fe")


def information(P: np.ndarray) -> np.ndarray:
    """Inverse of a covariance block; pseudo-inverse with a warning if singular."""
    P = 0.5 * (P + P.T)
    w, V = np.linalg.eigh(P)
    if w.min() <= 1e-14 * max(w.max(), 1e-300):
        warnings.warn("singular preintegration covariance, using pseudo-inverse", RuntimeWarning)
        inv = np.where(w > 1e-14 * w.max(), 1.0 / np.where(w > 0, w, 1.0), 0.0)
    else:
        inv = 1.0 / w
    W = (V * inv) @ V.T
    return 0.5 * (W + W.T)


def _state_terms(delta: PreintegratedDelta, xk: DroneState, xk1: DroneState, g):
    g = np.asarray(g, dtype=float)
    dt = delta.dt
    R0 = quat_to_rot(xk.q)
    u = xk1.p - xk.p - xk.v * dt - 0.5 * g * dt * dt
    w = xk1.v - xk.v - g * dt
    return R0, u, w, R0.T @ u, R0.T @ w


def dynamics_residual(delta: PreintegratedDelta, xk: DroneState, xk1: DroneState, g,
                      fe_mean=None, w_f: float | None = None):
    """9-vector ``[alpha - alpha_hat; beta - beta_hat; f_e - fe_mean]`` and its weight.

    The preintegrated terms are corrected to ``xk.b_w`` to first order.
    ``fe_mean`` centres the external-force prior (zero unless given).
    """
    if delta.kind != "dynamics":
        raise ValueError("dynamics_residual needs a dynamics-kind delta")
    dt = delta.dt
    a_hat, b_hat, _ = correct_bias_change(delta, xk.b_w)
    _, _, _, a, b = _state_terms(delta, xk, xk1, g)
    a = a - 0.5 * xk.f_e * dt * dt
    b = b - xk.f_e * dt
    fe_mean = np.zeros(3) if fe_mean is None else np.asarray(fe_mean, dtype=float)
    e = np.concatenate([a - a_hat, b - b_hat, xk.f_e - fe_mean])
    if w_f is None:
        w_f = getattr(delta.noise, "w_f", 1.0 / 25.0)
    W = np.zeros((9, 9))
    W[:6, :6] = information(delta.P[:6, :6])
    W[6:, 6:] = w_f * np.eye(3)
    return e, W


def imu_residual(delta: PreintegratedDelta, xk: DroneState, xk1: DroneState, g):
    """15-vector ``[d_alpha; d_beta; d_theta; b_w1 - b_w0; b_a1 - b_a0]`` and its weight."""
    if delta.kind != "imu":
        raise ValueError("imu_residual needs an imu-kind delta")
    a_hat, b_hat, g_hat = correct_bias_change(delta, xk.b_w, xk.b_a)
    _, _, _, a, b = _state_terms(delta, xk, xk1, g)
    dq = quat_mul(quat_conj(g_hat), quat_mul(quat_conj(xk.q), xk1.q))
    e = np.concatenate([a - a_hat, b - b_hat, quat_log(dq), xk1.b_w - xk.b_w, xk1.b_a - xk.b_a])
    return e, information(delta.P)


def residual_jacobians(delta: PreintegratedDelta, xk: DroneState, xk1: DroneState, g) -> dict:
    """Jacobians of the residual of ``delta.kind`` w.r.t. the tangent of both states.

    Keys are ``<block><0|1>`` with blocks ``p, th, v, ba, bw, fe``; rotations
    are perturbed on the right, ``q <- q * exp(d_theta)``. Blocks a residual
    does not depend on are omitted.
    """
    dt = delta.dt
    R0, u, w, a, b = _state_terms(delta, xk, xk1, g)
    I3 = np.eye(3)
    if delta.kind == "dynamics":
        J = {k: np.zeros((9, 3)) for k in ("p0", "th0", "v0", "bw0", "fe0", "p1", "v1")}
        J["p0"][0:3] = -R0.T
        J["p1"][0:3] = R0.T
        J["v0"][0:3] = -R0.T * dt
        J["v0"][3:6] = -R0.T
        J["v1"][3:6] = R0.T
        J["th0"][0:3] = skew(a)
        J["th0"][3:6] = skew(b)
        J["fe0"][0:3] = -0.5 * dt * dt * I3
        J["fe0"][3:6] = -dt * I3
        J["fe0"][6:9] = I3
        J["bw0"][0:3] = -delta.J_alpha_bw
        J["bw0"][3:6] = -delta.J_beta_bw
        return J
    if delta.kind != "imu":
        raise ValueError(f"unknown delta kind {delta.kind!r}")
    J = {k: np.zeros((15, 3)) for k in ("p0", "th0", "v0", "ba0", "bw0", "p1", "th1", "v1", "ba1", "bw1")}
    J["p0"][0:3] = -R0.T
    J["p1"][0:3] = R0.T
    J["v0"][0:3] = -R0.T * dt
    J["v0"][3:6] = -R0.T
    J["v1"][3:6] = R0.T
    J["th0"][0:3] = skew(a)
    J["th0"][3:6] = skew(b)
    phi_c = delta.J_gamma_bw @ (xk.b_w - delta.bw_bar)
    g_hat = quat_mul(delta.gamma, quat_exp(phi_c))
    dq = quat_mul(quat_conj(g_hat), quat_mul(quat_conj(xk.q), xk1.q))
    e_th = quat_log(dq)
    Jinv = right_jacobian_inv(e_th)
    R1 = quat_to_rot(xk1.q)
    J["th1"][6:9] = Jinv
    J["th0"][6:9] = -Jinv @ R1.T @ R0
    J["bw0"][6:9] = -Jinv @ quat_to_rot(dq).T @ right_jacobian(phi_c) @ delta.J_gamma_bw
    J["bw0"][0:3] = -delta.J_alpha_bw
    J["bw0"][3:6] = -delta.J_beta_bw
    J["ba0"][0:3] = -delta.J_alpha_ba
    J["ba0"][3:6] = -delta.J_beta_ba
    J["bw0"][9:12] = -I3
    J["bw1"][9:12] = I3
    J["ba0"][12:15] = -I3
    J["ba1"][12:15] = I3
    return J


def retract(x: DroneState, block: str, d: np.ndarray) -> DroneState:
    """Apply a tangent perturbation to one block of a state."""
    d = np.asarray(d, dtype=float)
    if block == "p":
        return x.copy(p=x.p + d)
    if block == "th":
        return x.copy(q=quat_mul(x.q, quat_exp(d)))
    if block == "v":
        return x.copy(v=x.v + d)
    if block == "ba":
        return x.copy(b_a=x.b_a + d)
    if block == "bw":
        return x.copy(b_w=x.b_w + d)
    if block == "fe":
        return x.copy(f_e=x.f_e + d)
    raise KeyError(block)
