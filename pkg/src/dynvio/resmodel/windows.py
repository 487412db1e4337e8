"""Fixed-length thrust + gyro input windows for the residual-force models."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..preint.types import MeasurementBuffer

WINDOW_LEN = 10
N_CHANNELS = 4


@dataclass(frozen=True, eq=False)
class InputWindow:
    """Channel-by-time array: row 0 thrust (m/s^2), rows 1-3 bias-removed gyro (rad/s).

    Only thrust and gyro enter the window; the vehicle state never does.
    """

    data: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.data, dtype=float)
        if d.shape != (N_CHANNELS, WINDOW_LEN):
            raise ValueError(f"window shape {d.shape}, expected ({N_CHANNELS}, {WINDOW_LEN})")
        if not np.all(np.isfinite(d)):
            raise ValueError("non-finite window entries")
        object.__setattr__(self, "data", d)

    @classmethod
    def from_samples(cls, thrust, gyro, bw=None) -> "InputWindow":
        gyro = np.asarray(gyro, dtype=float)
        if bw is not None:
            gyro = gyro - np.asarray(bw, dtype=float)
        return cls(np.vstack([np.asarray(thrust, dtype=float)[None, :], gyro.T]))


def window_rows(n: int, start: int) -> np.ndarray:
    """Indices of a length-10 window starting at ``start``, edge-clamped to ``[0, n)``."""
    return np.clip(np.arange(start, start + WINDOW_LEN), 0, n - 1)


def window_segments(n_steps: int) -> list[tuple[int, int]]:
    """Split ``n_steps`` integration steps into consecutive window-long segments.

    The last segment may be shorter; its window is taken as the final ten
    samples so it still sees a full window of data.
    """
    if n_steps <= 0:
        raise ValueError("no integration steps")
    return [(s, min(s + WINDOW_LEN, n_steps)) for s in range(0, n_steps, WINDOW_LEN)]


def buffer_windows(buf: MeasurementBuffer, bw) -> tuple[list[tuple[int, int]], np.ndarray]:
    """Segments of ``buf`` and one raw window array (S, 4, 10) per segment."""
    if buf.thrust is None:
        raise ValueError("buffer has no thrust samples")
    n = len(buf)
    segs = window_segments(n)
    g = buf.gyro - np.asarray(bw, dtype=float)
    out = np.empty((len(segs), N_CHANNELS, WINDOW_LEN))
    for j, (s, e) in enumerate(segs):
        rows = window_rows(n, min(s, max(n - WINDOW_LEN, 0)) if e - s < WINDOW_LEN else s)
        out[j, 0] = buf.thrust[rows]
        out[j, 1:] = g[rows].T
    return segs, out


def sliding_windows(thrust: np.ndarray, gyro: np.ndarray, bw=None) -> np.ndarray:
    """One window per sample, centred on it (5 before, 4 after) and clamped at the ends."""
    thrust = np.asarray(thrust, dtype=float)
    gyro = np.asarray(gyro, dtype=float)
    if bw is not None:
        gyro = gyro - np.asarray(bw, dtype=float)
    n = len(thrust)
    if n < WINDOW_LEN:
        raise ValueError(f"buffer too short: {n} samples, need at least {WINDOW_LEN}")
    idx = np.clip(np.arange(n)[:, None] + np.arange(-WINDOW_LEN // 2, WINDOW_LEN - WINDOW_LEN // 2)[None, :], 0, n - 1)
    out = np.empty((n, N_CHANNELS, WINDOW_LEN))
    out[:, 0] = thrust[idx]
    out[:, 1:] = np.transpose(gyro[idx], (0, 2, 1))
    return out
