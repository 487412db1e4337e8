"""Monte-Carlo check of the propagated preintegration covariance.

Noise is injected into a fixed noiseless buffer exactly as the error model
assumes: white per-sample noise on the body force and gyro, a Gaussian
random walk on the gyro bias. The preintegrated deltas of every draw are
compared with the noiseless ones in a vectorized Euler loop that does not
use the library code.
"""
from __future__ import annotations

import numpy as np

from dynvio.preint import DynamicsNoiseParams, MeasurementBuffer, preintegrate_dynamics


def _qmul(a, b):
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    return np.stack([aw * bw - ax * bx - ay * by - az * bz,
                     aw * bx + ax * bw + ay * bz - az * by,
                     aw * by - ax * bz + ay * bw + az * bx,
                     aw * bz + ax * by - ay * bx + az * bw], axis=-1)


def _qrot(q, v):
    u = q[..., 1:]
    w = q[..., :1]
    t = 2.0 * np.cross(u, v)
    return v + w * t + np.cross(u, t)


def _integrate(forces, gyro, dts):
    m = forces.shape[0]
    alpha = np.zeros((m, 3))
    beta = np.zeros((m, 3))
    gamma = np.tile([1.0, 0.0, 0.0, 0.0], (m, 1))
    for i, dt in enumerate(dts):
        rf = _qrot(gamma, forces[:, i])
        alpha = alpha + beta * dt + 0.5 * rf * dt * dt
        beta = beta + rf * dt
        step = np.concatenate([np.ones((m, 1)), 0.5 * gyro[:, i] * dt], axis=1)
        step /= np.linalg.norm(step, axis=1, keepdims=True)
        gamma = _qmul(gamma, step)
        gamma /= np.linalg.norm(gamma, axis=1, keepdims=True)
    return alpha, beta, gamma


def _qlog(q):
    q = np.where(q[:, :1] < 0, -q, q)
    n = np.linalg.norm(q[:, 1:], axis=1, keepdims=True)
    return 2.0 * np.arctan2(n, q[:, :1]) / np.maximum(n, 1e-300) * q[:, 1:]


def monte_carlo_covariance(n_draws: int = 10_000, seed: int = 0, n_steps: int = 20,
                           noise: DynamicsNoiseParams | None = None):
    """Empirical covariance of (d_alpha, d_beta, d_theta) and the propagated P."""
    noise = noise or DynamicsNoiseParams(sigma_ft=0.1, sigma_w=0.01, sigma_bw=1e-3)
    rng = np.random.default_rng(seed)
    dt = 0.01
    t = np.arange(n_steps) * dt
    omega = np.column_stack([np.sin(3 * t), 0.5 + 0.3 * np.cos(2 * t), -0.8 + t])
    thrust = 9.81 + 2.0 * np.sin(5 * t)
    buf = MeasurementBuffer(0.0, n_steps * dt, t, omega, thrust)
    P = preintegrate_dynamics(buf, np.zeros(3), noise=noise).P
    dts = buf.dts
    forces = np.zeros((n_steps, 3))
    forces[:, 2] = thrust
    a0, b0, g0 = _integrate(forces[None], omega[None], dts)

    walk = rng.standard_normal((n_draws, n_steps, 3)) * noise.sigma_bw * np.sqrt(dts)[None, :, None]
    bias = np.concatenate([np.zeros((n_draws, 1, 3)), np.cumsum(walk[:, :-1], axis=1)], axis=1)
    f_meas = forces[None] + noise.sigma_ft * rng.standard_normal((n_draws, n_steps, 3))
    w_meas = omega[None] + bias + noise.sigma_w * rng.standard_normal((n_draws, n_steps, 3))
    a, b, g = _integrate(f_meas, w_meas, dts)
    dth = _qlog(_qmul(np.tile(g0 * [1, -1, -1, -1], (n_draws, 1)), g))
    err = np.concatenate([a - a0, b - b0, dth], axis=1)
    return np.cov(err, rowvar=False), P
