"""CSV dataset directory: export and import of sensor logs and ground truth."""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .config import Camera
from .dynamics import GroundTruth
from .sensors import SensorLog

COLUMNS = {
    "imu.csv": ["t", "wx", "wy", "wz", "ax", "ay", "az"],
    "thrust.csv": ["t", "T"],
    "features.csv": ["t", "frame_id", "landmark_id", "u", "v"],
    "landmarks.csv": ["id", "x", "y", "z"],
    "gt.csv": ["t", "px", "py", "pz", "qw", "qx", "qy", "qz", "vx", "vy", "vz", "fex", "fey", "fez"],
}
INT_COLUMNS = {"frame_id", "landmark_id", "id"}


class DatasetError(ValueError):
    pass


def _write_csv(path: Path, header: list[str], rows: np.ndarray, int_cols=()):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        for row in rows:
            w.writerow([str(int(x)) if j in int_cols else repr(float(x)) for j, x in enumerate(row)])


def _read_csv(path: Path, name: str, time_col: str | None = "t") -> np.ndarray:
    expected = COLUMNS[name]
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DatasetError(f"{name}: empty file")
        unknown = [h for h in header if h not in expected]
        if unknown:
            raise DatasetError(f"{name}: unknown column(s) {unknown}")
        if header != expected:
            raise DatasetError(f"{name}: expected columns {expected}, got {header}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(expected):
                raise DatasetError(f"{name}:{lineno}: malformed row (expected {len(expected)} fields)")
            try:
                rows.append([float(x) for x in row])
            except ValueError:
                raise DatasetError(f"{name}:{lineno}: malformed row {row}")
    data = np.array(rows, dtype=float).reshape(-1, len(expected))
    if time_col is not None and len(data) > 1:
        t = data[:, expected.index(time_col)]
        if np.any(np.diff(t) < 0):
            raise DatasetError(f"{name}: unsorted timestamps")
    return data


def export_dataset(log: SensorLog, truth: GroundTruth | None, path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    _write_csv(path / "imu.csv", COLUMNS["imu.csv"], np.column_stack([log.imu_t, log.gyro, log.accel]))
    _write_csv(path / "thrust.csv", COLUMNS["thrust.csv"], np.column_stack([log.thrust_t, log.thrust]))
    _write_csv(path / "features.csv", COLUMNS["features.csv"],
               np.column_stack([log.feat_t, log.feat_frame, log.feat_lm, log.feat_uv]), int_cols=(1, 2))
    _write_csv(path / "landmarks.csv", COLUMNS["landmarks.csv"],
               np.column_stack([log.landmark_ids, log.landmarks]), int_cols=(0,))
    if truth is not None:
        _write_csv(path / "gt.csv", COLUMNS["gt.csv"],
                   np.column_stack([truth.t, truth.p, truth.q, truth.v, truth.f_e]))
    calib = {
        "intrinsics": {k: log.camera.to_dict()[k] for k in ("fx", "fy", "cx", "cy", "width", "height")},
        "body_to_camera": {"R_bc": log.camera.R_bc.tolist(), "t_bc": log.camera.t_bc.tolist()},
        "rates": dict(log.rates),
        "frame_times": [repr(float(t)) for t in log.frame_t],
    }
    (path / "calib.json").write_text(json.dumps(calib, indent=2))
    return path


def import_dataset(path) -> tuple[SensorLog, GroundTruth | None]:
    path = Path(path)
    for name in ("imu.csv", "thrust.csv", "features.csv", "landmarks.csv", "calib.json"):
        if not (path / name).exists():
            raise DatasetError(f"missing {name} in {path}")
    imu = _read_csv(path / "imu.csv", "imu.csv")
    thr = _read_csv(path / "thrust.csv", "thrust.csv")
    feat = _read_csv(path / "features.csv", "features.csv")
    lms = _read_csv(path / "landmarks.csv", "landmarks.csv", time_col=None)
    calib = json.loads((path / "calib.json").read_text())
    intr = calib["intrinsics"]
    cam = Camera(fx=intr["fx"], fy=intr["fy"], cx=intr["cx"], cy=intr["cy"],
                 width=intr["width"], height=intr["height"],
                 R_bc=calib["body_to_camera"]["R_bc"], t_bc=calib["body_to_camera"]["t_bc"])
    frame_t = np.array([float(t) for t in calib.get("frame_times", [])])
    if len(frame_t) == 0 and len(feat):
        frame_t = np.unique(feat[:, 0])
    try:
        log = SensorLog(
            imu_t=imu[:, 0], gyro=imu[:, 1:4], accel=imu[:, 4:7],
            thrust_t=thr[:, 0], thrust=thr[:, 1], frame_t=frame_t,
            feat_t=feat[:, 0], feat_frame=feat[:, 1].astype(int), feat_lm=feat[:, 2].astype(int),
            feat_uv=feat[:, 3:5], landmark_ids=lms[:, 0].astype(int), landmarks=lms[:, 1:4],
            camera=cam, rates=calib.get("rates", {}),
        )
    except ValueError as e:
        raise DatasetError(str(e)) from e
    truth = None
    if (path / "gt.csv").exists():
        gt = _read_csv(path / "gt.csv", "gt.csv")
        truth = GroundTruth(t=gt[:, 0], p=gt[:, 1:4], q=gt[:, 4:8], v=gt[:, 8:11], f_e=gt[:, 11:14],
                            f_aero=np.full((len(gt), 3), np.nan))
    return log, truth
