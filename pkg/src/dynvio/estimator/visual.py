"""Reprojection residuals (vectorized over observations) and midpoint triangulation."""
from __future__ import annotations

import numpy as np

from ..geometry import quat_to_rot
from ..sim.config import Camera


def reprojection(camera: Camera, R_wb: np.ndarray, p_wb: np.ndarray, landmarks: np.ndarray, uv: np.ndarray,
                 jacobians: bool = True):
    """Pixel errors ``pi(x_c) - uv`` for N observations and their Jacobians.

    ``R_wb`` (N,3,3) and ``p_wb`` (N,3) are the observing body poses. Returns
    ``(e, depth, J_p, J_th, J_l)`` with 2x3 Jacobians per observation; the
    rotation Jacobian is for the right perturbation ``R exp(d)``.
    """
    d = landmarks - p_wb
    p_b = np.einsum("nji,nj->ni", R_wb, d)
    Rbc = camera.R_bc
    p_c = (p_b - camera.t_bc) @ Rbc
    x, y, z = p_c[:, 0], p_c[:, 1], p_c[:, 2]
    zs = np.where(np.abs(z) < 1e-9, 1e-9, z)
    e = np.column_stack([camera.fx * x / zs + camera.cx, camera.fy * y / zs + camera.cy]) - uv
    if not jacobians:
        return e, z
    n = len(e)
    Jpi = np.zeros((n, 2, 3))
    Jpi[:, 0, 0] = camera.fx / zs
    Jpi[:, 0, 2] = -camera.fx * x / zs**2
    Jpi[:, 1, 1] = camera.fy / zs
    Jpi[:, 1, 2] = -camera.fy * y / zs**2
    A = Jpi @ Rbc.T  # d e / d p_b
    J_l = np.einsum("nij,nkj->nik", A, R_wb)  # A R_wb^T
    J_p = -J_l
    skew_pb = np.zeros((n, 3, 3))
    skew_pb[:, 0, 1], skew_pb[:, 0, 2] = -p_b[:, 2], p_b[:, 1]
    skew_pb[:, 1, 0], skew_pb[:, 1, 2] = p_b[:, 2], -p_b[:, 0]
    skew_pb[:, 2, 0], skew_pb[:, 2, 1] = -p_b[:, 1], p_b[:, 0]
    J_th = A @ skew_pb
    return e, z, J_p, J_th, J_l


def bearing_world(camera: Camera, q_wb: np.ndarray, uv: np.ndarray) -> np.ndarray:
    ray_c = np.array([(uv[0] - camera.cx) / camera.fx, (uv[1] - camera.cy) / camera.fy, 1.0])
    r = quat_to_rot(q_wb) @ camera.R_bc @ ray_c
    return r / np.linalg.norm(r)


def triangulate_midpoint(centers: np.ndarray, dirs: np.ndarray):
    """Point minimizing the summed squared distance to the rays ``c_i + s d_i``.

    Returns ``(point, depths)``; ``depths`` are the ray parameters of the
    closest points, negative when the point lies behind a camera.
    """
    A = np.zeros((3, 3))
    b = np.zeros(3)
    for c, d in zip(centers, dirs):
        M = np.eye(3) - np.outer(d, d)
        A += M
        b += M @ c
    if np.linalg.cond(A) > 1e10:
        raise np.linalg.LinAlgError("degenerate ray geometry")
    x = np.linalg.solve(A, b)
    depths = np.einsum("ij,ij->i", x - centers, dirs)
    return x, depths


def max_ray_angle(dirs: np.ndarray) -> float:
    """Largest pairwise angle between unit rays, radians."""
    c = np.clip(dirs @ dirs.T, -1.0, 1.0)
    return float(np.arccos(c.min()))
