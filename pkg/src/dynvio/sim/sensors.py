"""Synthetic IMU, thrust and landmark-observation streams."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..geometry import quat_to_rot
from .config import Camera, SensorNoiseConfig
from .dynamics import GroundTruth


@dataclass(eq=False)
class SensorLog:
    """Time-stamped sensor streams of one flight.

    Features are stored column-wise: ``feat_t``, ``feat_frame``,
    ``feat_lm`` and pixel coordinates ``feat_uv``. ``frame_t`` lists every
    camera frame, including frames without features.
    """

    imu_t: np.ndarray
    gyro: np.ndarray
    accel: np.ndarray
    thrust_t: np.ndarray
    thrust: np.ndarray
    frame_t: np.ndarray
    feat_t: np.ndarray
    feat_frame: np.ndarray
    feat_lm: np.ndarray
    feat_uv: np.ndarray
    landmark_ids: np.ndarray
    landmarks: np.ndarray
    camera: Camera
    rates: dict = field(default_factory=dict)
    # true sensor biases (not exported)
    gyro_bias: np.ndarray | None = None
    accel_bias: np.ndarray | None = None

    def __post_init__(self):
        for name in ("imu_t", "thrust_t", "frame_t", "feat_t"):
            a = getattr(self, name)
            if len(a) > 1 and np.any(np.diff(a) < 0):
                raise ValueError(f"{name}: unsorted timestamps")
        missing = np.setdiff1d(np.unique(self.feat_lm), self.landmark_ids)
        if len(missing):
            raise ValueError(f"features reference unknown landmarks {missing[:5].tolist()}")

    def landmark_map(self) -> dict[int, np.ndarray]:
        return {int(i): self.landmarks[k] for k, i in enumerate(self.landmark_ids)}

    def frame_features(self, frame_id: int) -> dict[int, np.ndarray]:
        m = self.feat_frame == frame_id
        return {int(l): uv for l, uv in zip(self.feat_lm[m], self.feat_uv[m])}

    def equals(self, other: "SensorLog", rtol: float = 1e-9) -> bool:
        def close(a, b):
            a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
            return a.shape == b.shape and np.allclose(a, b, rtol=rtol, atol=0.0)
        arrays = ("imu_t", "gyro", "accel", "thrust_t", "thrust", "frame_t", "feat_t",
                  "feat_frame", "feat_lm", "feat_uv", "landmark_ids", "landmarks")
        if not all(close(getattr(self, n), getattr(other, n)) for n in arrays):
            return False
        a, b = self.camera.to_dict(), other.camera.to_dict()
        return all(np.allclose(a[k], b[k], rtol=rtol, atol=0.0) for k in a)

    def bitwise_equal(self, other: "SensorLog") -> bool:
        arrays = ("imu_t", "gyro", "accel", "thrust_t", "thrust", "frame_t", "feat_t",
                  "feat_frame", "feat_lm", "feat_uv", "landmark_ids", "landmarks")
        return all(np.array_equal(getattr(self, n), getattr(other, n)) for n in arrays)


def make_scene(kind: str = "room", n: int = 600, extent=(12.0, 12.0, 4.0), center=(0.0, 0.0, 0.0),
               seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Landmark cloud: ``room`` (walls + floor of a box) or ``cloud`` (uniform volume)."""
    rng = np.random.default_rng(seed)
    ex = np.asarray(extent, dtype=float) / 2.0
    c = np.asarray(center, dtype=float)
    if kind == "cloud":
        pts = rng.uniform(-ex, ex, size=(n, 3)) + c + np.array([0.0, 0.0, ex[2]])
    elif kind == "room":
        face = rng.integers(0, 5, size=n)
        u = rng.uniform(-1.0, 1.0, size=(n, 3))
        pts = u * ex
        pts[:, 2] = (u[:, 2] + 1.0) * ex[2]
        pts[face == 0, 0] = ex[0]
        pts[face == 1, 0] = -ex[0]
        pts[face == 2, 1] = ex[1]
        pts[face == 3, 1] = -ex[1]
        pts[face == 4, 2] = 0.0
        pts += c
    else:
        raise ValueError(f"unknown scene kind {kind!r}")
    return np.arange(n), pts


def camera_pose(p: np.ndarray, q: np.ndarray, camera: Camera) -> tuple[np.ndarray, np.ndarray]:
    """World-from-camera rotation and camera centre for body pose ``(p, q)``."""
    R_wb = quat_to_rot(q)
    return R_wb @ camera.R_bc, p + R_wb @ camera.t_bc


def observe(p, q, landmarks: np.ndarray, camera: Camera, min_depth: float = 0.2,
            max_depth: float = np.inf):
    """Noiseless pixels of landmarks visible from body pose ``(p, q)``."""
    R_wc, t_wc = camera_pose(p, q, camera)
    pc = (landmarks - t_wc) @ R_wc
    front = (pc[:, 2] > min_depth) & (pc[:, 2] < max_depth)
    uv = np.full((len(landmarks), 2), np.nan)
    uv[front] = camera.project(pc[front])
    vis = front.copy()
    vis[front] = camera.in_bounds(uv[front])
    return vis, uv


def synthesize_sensors(truth: GroundTruth, noise: SensorNoiseConfig, landmark_ids: np.ndarray,
                       landmarks: np.ndarray, camera: Camera, thrust_bias: float = 1.0,
                       max_depth: float = np.inf) -> SensorLog:
    """Corrupt ground truth into IMU, thrust and feature streams.

    Every stream draws from its own child of ``noise.seed`` so the log is a
    pure function of its inputs.
    """
    if len(truth) == 0:
        raise ValueError("empty ground truth")
    if truth.omega is None or truth.specific_force is None or truth.thrust is None:
        raise ValueError("ground truth lacks simulator internals (thrust, rates)")
    dt = float(np.median(np.diff(truth.t)))
    imu_rate = 1.0 / dt
    if abs(imu_rate - noise.imu_rate) > 1e-6 * noise.imu_rate:
        raise ValueError(f"truth sampled at {imu_rate:.3f} Hz but imu_rate is {noise.imu_rate}")
    g_rng, a_rng, t_rng, f_rng, s_rng = (np.random.default_rng(s) for s in
                                         np.random.SeedSequence(noise.seed).spawn(5))
    n = len(truth)

    walk_g = g_rng.standard_normal((n, 3)) * noise.gyro_bias_walk * np.sqrt(dt)
    walk_g[0] = 0.0
    b_g = noise.gyro_bias0 + np.cumsum(walk_g, axis=0)
    gyro = truth.omega + b_g + noise.gyro_noise * g_rng.standard_normal((n, 3))

    walk_a = a_rng.standard_normal((n, 3)) * noise.accel_bias_walk * np.sqrt(dt)
    walk_a[0] = 0.0
    b_a = noise.accel_bias0 + np.cumsum(walk_a, axis=0)
    accel = truth.specific_force + b_a + noise.accel_noise * a_rng.standard_normal((n, 3))

    t_step = int(round(noise.imu_rate / noise.thrust_rate))
    idx_t = np.arange(0, n, t_step)
    thrust = thrust_bias * truth.thrust[idx_t] + noise.thrust_noise * t_rng.standard_normal(len(idx_t))

    c_step = int(round(noise.imu_rate / noise.cam_rate))
    idx_c = np.arange(0, n, c_step)
    feat_t, feat_frame, feat_lm, feat_uv = [], [], [], []
    tracked = np.zeros(0, dtype=int)
    for fid, i in enumerate(idx_c):
        vis, uv = observe(truth.p[i], truth.q[i], landmarks, camera, max_depth=max_depth)
        ids = np.flatnonzero(vis)
        if noise.max_features is not None and len(ids) > noise.max_features:
            # a tracker keeps following visible features and tops up with new ones
            kept = np.intersect1d(tracked, ids)[:noise.max_features]
            fresh = np.setdiff1d(ids, kept)
            extra = s_rng.choice(fresh, size=noise.max_features - len(kept), replace=False)
            ids = np.sort(np.concatenate([kept, extra]).astype(int))
        tracked = ids
        pix = uv[ids] + noise.pixel_noise * f_rng.standard_normal((len(ids), 2))
        keep = camera.in_bounds(pix)
        ids, pix = ids[keep], pix[keep]
        feat_t.append(np.full(len(ids), truth.t[i]))
        feat_frame.append(np.full(len(ids), fid))
        feat_lm.append(np.asarray(landmark_ids)[ids])
        feat_uv.append(pix)
    if sum(len(x) for x in feat_lm) == 0:
        raise ValueError("no landmark is ever visible: scene and camera do not match")
    rates = {"imu": noise.imu_rate, "thrust": noise.thrust_rate, "cam": noise.cam_rate}
    return SensorLog(
        imu_t=truth.t.copy(), gyro=gyro, accel=accel,
        thrust_t=truth.t[idx_t].copy(), thrust=thrust,
        frame_t=truth.t[idx_c].copy(),
        feat_t=np.concatenate(feat_t), feat_frame=np.concatenate(feat_frame).astype(int),
        feat_lm=np.concatenate(feat_lm).astype(int), feat_uv=np.concatenate(feat_uv).reshape(-1, 2),
        landmark_ids=np.asarray(landmark_ids, dtype=int), landmarks=np.asarray(landmarks, dtype=float),
        camera=camera, rates=rates, gyro_bias=b_g, accel_bias=b_a,
    )
