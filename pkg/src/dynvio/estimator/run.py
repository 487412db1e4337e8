"""Stream a sensor log through the sliding window and write the estimates."""
from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..geometry import quat_from_yaw, quat_mul, quat_to_rot, rot_to_quat
from ..preint import DroneState, MeasurementBuffer
from ..resmodel.models import ResidualForceModel
from ..sim.dynamics import GroundTruth
from ..sim.sensors import SensorLog
from .config import EstimatorConfig
from .window import SlidingWindow


@dataclass
class RunResult:
    """Per-frame estimates in time order plus solver diagnostics."""

    mode: str
    t: np.ndarray
    p: np.ndarray
    q: np.ndarray
    v: np.ndarray
    b_a: np.ndarray
    b_w: np.ndarray
    f_e: np.ndarray  # body frame, held over the interval after each frame
    diag: list = field(default_factory=list)
    seconds: float = 0.0

    @property
    def f_e_world(self) -> np.ndarray:
        return np.einsum("nij,nj->ni", quat_to_rot(self.q), self.f_e)

    def __len__(self) -> int:
        return len(self.t)


def gravity_aligned_state(log: SensorLog, t0: float, gravity, duration: float = 0.5) -> DroneState:
    """Initial attitude from averaged accelerometer data, assuming the drone rests.

    Yaw is unobservable and set to zero; position and velocity are zero.
    """
    m = (log.imu_t >= t0) & (log.imu_t < t0 + duration)
    if not np.any(m):
        raise ValueError("no accelerometer data for static initialization")
    a = log.accel[m].mean(axis=0)
    up_b = a / np.linalg.norm(a)  # world up expressed in the body frame
    up_w = -np.asarray(gravity, dtype=float) / np.linalg.norm(gravity)
    axis = np.cross(up_b, up_w)
    s, c = np.linalg.norm(axis), float(up_b @ up_w)
    if s < 1e-12:
        q = np.array([1.0, 0.0, 0.0, 0.0]) if c > 0 else np.array([0.0, 1.0, 0.0, 0.0])
    else:
        ang = np.arctan2(s, c)
        q = np.concatenate([[np.cos(ang / 2)], np.sin(ang / 2) * axis / s])
    # remove the yaw component so the gauge is fixed at zero heading
    R = quat_to_rot(q)
    yaw = np.arctan2(R[1, 0], R[0, 0])
    q = quat_mul(quat_from_yaw(-yaw), q)
    return DroneState(np.zeros(3), q, np.zeros(3))


def truth_state(truth: GroundTruth, t: float) -> DroneState:
    i = truth.index_of(t)
    return DroneState(truth.p[i].copy(), truth.q[i].copy(), truth.v[i].copy())


def run_sequence(log: SensorLog, model: ResidualForceModel | None, cfg: EstimatorConfig,
                 truth: GroundTruth | None = None, t_end: float | None = None) -> RunResult:
    """Add, optimize and marginalize frame by frame.

    Estimates are reported for each frame when its velocity/bias/force block
    leaves the window (fixed-lag smoothing); the frames still in the window at
    the end are reported with their final values.
    """
    start = time.perf_counter()
    frame_t = np.asarray(log.frame_t, dtype=float)
    if t_end is not None:
        frame_t = frame_t[frame_t <= t_end + 1e-9]
    if len(frame_t) < 2:
        raise ValueError("sequence needs at least two camera frames")
    if cfg.init_from_truth:
        if truth is None:
            raise ValueError("init_from_truth requires ground truth")
        x0 = truth_state(truth, frame_t[0])
    else:
        x0 = gravity_aligned_state(log, frame_t[0], cfg.gravity)
    win = SlidingWindow(cfg, log.camera, model)
    win.initialize(frame_t[0], x0, log.frame_features(0))
    diag = []
    for k in range(1, len(frame_t)):
        tic = time.perf_counter()
        buf = MeasurementBuffer.from_log(log, frame_t[k - 1], frame_t[k])
        fr = win.add_measurements(frame_t[k], log.frame_features(k), buf)
        info = win.optimize()
        win.marginalize()
        diag.append({"frame": k, "t": float(frame_t[k]), "keyframe": fr.keyframe, "cost": info["cost"],
                     "iterations": info["iterations"], "rejected": info["rejected"],
                     "landmarks": len(win.active_landmarks()), "seconds": time.perf_counter() - tic})
    frames = list(win.finished) + [win.frames[f] for f in win.state_frame_ids]
    st = [f.state for f in frames]
    res = RunResult(cfg.mode, np.array([f.t for f in frames]), np.array([s.p for s in st]),
                    np.array([s.q for s in st]), np.array([s.v for s in st]), np.array([s.b_a for s in st]),
                    np.array([s.b_w for s in st]), np.array([s.f_e for s in st]), diag,
                    time.perf_counter() - start)
    return res


def write_outputs(res: RunResult, out_dir, extra: dict | None = None) -> Path:
    """``traj_est.csv``, ``force_est.csv`` and ``diag.json`` in ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "traj_est.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "px", "py", "pz", "qw", "qx", "qy", "qz", "vx", "vy", "vz",
                    "bax", "bay", "baz", "bwx", "bwy", "bwz"])
        for row in np.column_stack([res.t, res.p, res.q, res.v, res.b_a, res.b_w]):
            w.writerow([repr(float(x)) for x in row])
    with open(out / "force_est.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "fex", "fey", "fez", "fex_world", "fey_world", "fez_world"])
        for row in np.column_stack([res.t, res.f_e, res.f_e_world]):
            w.writerow([repr(float(x)) for x in row])
    doc = {"mode": res.mode, "seconds": res.seconds, "frames": res.diag}
    if extra:
        doc.update(extra)
    (out / "diag.json").write_text(json.dumps(doc, indent=1))
    return out


def read_trajectory(out_dir) -> RunResult:
    """Load ``traj_est.csv`` and ``force_est.csv`` written by :func:`write_outputs`."""
    out = Path(out_dir)
    tr = np.loadtxt(out / "traj_est.csv", delimiter=",", skiprows=1, ndmin=2)
    fo = np.loadtxt(out / "force_est.csv", delimiter=",", skiprows=1, ndmin=2)
    mode = "unknown"
    if (out / "diag.json").exists():
        mode = json.loads((out / "diag.json").read_text()).get("mode", mode)
    return RunResult(mode, tr[:, 0], tr[:, 1:4], tr[:, 4:8], tr[:, 8:11], tr[:, 11:14], tr[:, 14:17], fo[:, 1:4])
