"""Trajectory alignment, absolute/relative errors and force RMSE."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..geometry import quat_to_rot, so3_log, yaw_rotation

ASSOC_TOL = 5e-3
DISTANCE_BINS = (2.0, 5.0, 10.0, 20.0)


@dataclass
class AlignedPair:
    """Estimate and ground truth on common timestamps, estimate already aligned.

    ``yaw`` and ``translation`` map the raw estimate onto ground truth:
    ``p_aligned = Rz(yaw) p_est + translation``.
    """

    t: np.ndarray
    p_est: np.ndarray
    R_est: np.ndarray
    p_gt: np.ndarray
    R_gt: np.ndarray
    yaw: float
    translation: np.ndarray

    def __len__(self) -> int:
        return len(self.t)


def associate(t_est: np.ndarray, t_gt: np.ndarray, tol: float = ASSOC_TOL):
    """Index pairs of nearest timestamps closer than ``tol``; unmatched samples are dropped."""
    t_est = np.asarray(t_est, dtype=float)
    t_gt = np.asarray(t_gt, dtype=float)
    if len(t_est) == 0 or len(t_gt) == 0:
        return np.zeros(0, int), np.zeros(0, int)
    j = np.clip(np.searchsorted(t_gt, t_est), 1, max(len(t_gt) - 1, 1))
    j0 = np.clip(j - 1, 0, len(t_gt) - 1)
    j1 = np.clip(j, 0, len(t_gt) - 1)
    pick = np.where(np.abs(t_gt[j0] - t_est) <= np.abs(t_gt[j1] - t_est), j0, j1)
    ok = np.abs(t_gt[pick] - t_est) <= tol
    return np.flatnonzero(ok), pick[ok]


def posyaw_transform(p_est: np.ndarray, p_gt: np.ndarray) -> tuple[float, np.ndarray]:
    """Yaw about z and translation minimizing the summed squared position error."""
    a = p_est - p_est.mean(axis=0)
    b = p_gt - p_gt.mean(axis=0)
    s = np.sum(a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0])
    c = np.sum(a[:, 0] * b[:, 0] + a[:, 1] * b[:, 1])
    yaw = float(np.arctan2(s, c)) if abs(s) + abs(c) > 0 else 0.0
    t = p_gt.mean(axis=0) - yaw_rotation(yaw) @ p_est.mean(axis=0)
    return yaw, t


def align_posyaw(t_est, p_est, q_est, t_gt, p_gt, q_gt, tol: float = ASSOC_TOL) -> AlignedPair:
    i, j = associate(t_est, t_gt, tol)
    if len(i) < 2:
        raise ValueError("no temporal overlap between estimate and ground truth")
    pe, pg = np.asarray(p_est, dtype=float)[i], np.asarray(p_gt, dtype=float)[j]
    yaw, tr = posyaw_transform(pe, pg)
    Rz = yaw_rotation(yaw)
    R_est = Rz @ quat_to_rot(np.asarray(q_est, dtype=float)[i])
    return AlignedPair(np.asarray(t_est, dtype=float)[i], pe @ Rz.T + tr, R_est, pg,
                       quat_to_rot(np.asarray(q_gt, dtype=float)[j]), yaw, tr)


def _check(pair: AlignedPair):
    if len(pair) == 0:
        raise ValueError("empty trajectory pair")


def rotation_angles_deg(R_a: np.ndarray, R_b: np.ndarray) -> np.ndarray:
    """Geodesic angles between stacked rotations, degrees."""
    rel = np.einsum("nji,njk->nik", R_a, R_b)
    c = np.clip((np.trace(rel, axis1=1, axis2=2) - 1.0) / 2.0, -1.0, 1.0)
    ang = np.arccos(c)
    # arccos loses precision near zero; use the log map there
    small = ang < 1e-3
    if np.any(small):
        ang[small] = np.linalg.norm(np.array([so3_log(r) for r in rel[small]]), axis=-1).reshape(-1)
    return np.degrees(ang)


def ate_translation(pair: AlignedPair) -> float:
    _check(pair)
    return float(np.sqrt(np.mean(np.sum((pair.p_est - pair.p_gt) ** 2, axis=1))))


def ate_rotation(pair: AlignedPair) -> float:
    _check(pair)
    return float(np.sqrt(np.mean(rotation_angles_deg(pair.R_gt, pair.R_est) ** 2)))


def scaled_bins(length: float, bins=DISTANCE_BINS) -> tuple:
    """Shrink the distance bins proportionally when the trajectory is too short for them."""
    top = max(bins)
    if length <= 0:
        raise ValueError("trajectory has zero length")
    s = min(1.0, 0.5 * length / top)
    return tuple(b * s for b in bins)


def relative_errors(pair: AlignedPair, lengths=None) -> list[dict]:
    """Relative translation/rotation errors of sub-trajectories by travelled distance.

    For each start sample the end sample is the first one at least ``d``
    metres further along the ground-truth path.
    """
    _check(pair)
    seg = np.linalg.norm(np.diff(pair.p_gt, axis=0), axis=1)
    dist = np.concatenate([[0.0], np.cumsum(seg)])
    lengths = scaled_bins(dist[-1]) if lengths is None else tuple(lengths)
    rows = []
    for d in lengths:
        et, er = [], []
        for i in range(len(dist)):
            j = int(np.searchsorted(dist, dist[i] + d))
            if j >= len(dist):
                break
            dg = pair.R_gt[i].T @ (pair.p_gt[j] - pair.p_gt[i])
            de = pair.R_est[i].T @ (pair.p_est[j] - pair.p_est[i])
            et.append(np.linalg.norm(dg - de))
            Rg = pair.R_gt[i].T @ pair.R_gt[j]
            Re = pair.R_est[i].T @ pair.R_est[j]
            er.append(rotation_angles_deg(Rg[None], Re[None])[0])
        et, er = np.array(et), np.array(er)
        rows.append({"distance": float(d), "count": int(len(et)),
                     "trans_mean": float(et.mean()) if len(et) else float("nan"),
                     "trans_median": float(np.median(et)) if len(et) else float("nan"),
                     "trans_percent": float(100.0 * et.mean() / d) if len(et) else float("nan"),
                     "rot_mean_deg": float(er.mean()) if len(er) else float("nan")})
    return rows


def force_rmse(t_est, f_est_body, t_gt, q_gt, f_true_body, mass: float = 1.0, tol: float = ASSOC_TOL) -> dict:
    """RMSE of external-force estimates in the world frame.

    Both series are body-frame specific forces; they are rotated with the
    ground-truth orientation. Results are in m/s^2 and, scaled by ``mass``,
    in Newtons.
    """
    if q_gt is None:
        raise ValueError("ground-truth orientations required")
    i, j = associate(t_est, t_gt, tol)
    if len(i) == 0:
        raise ValueError("no temporal overlap between force series")
    R = quat_to_rot(np.asarray(q_gt, dtype=float)[j])
    fe = np.einsum("nij,nj->ni", R, np.asarray(f_est_body, dtype=float)[i])
    ft = np.einsum("nij,nj->ni", R, np.asarray(f_true_body, dtype=float)[j])
    d = fe - ft
    axis = np.sqrt(np.mean(d * d, axis=0))
    total = float(np.sqrt(np.mean(np.sum(d * d, axis=1))))
    norm_err = float(np.sqrt(np.mean((np.linalg.norm(fe, axis=1) - np.linalg.norm(ft, axis=1)) ** 2)))
    return {"rmse": total, "rmse_x": float(axis[0]), "rmse_y": float(axis[1]), "rmse_z": float(axis[2]),
            "rmse_N": total * mass, "rmse_x_N": float(axis[0]) * mass, "rmse_y_N": float(axis[1]) * mass,
            "rmse_z_N": float(axis[2]) * mass, "norm_rmse": norm_err, "n": int(len(i)),
            "world_est": fe, "world_true": ft, "t": np.asarray(t_est, dtype=float)[i]}
