from __future__ import annotations

import numpy as np
import pytest

from dynvio.preint import MeasurementBuffer


def random_buffer(rng, n=20, dt=0.01, t0=0.0, accel=True, gyro_scale=1.0):
    t = t0 + np.arange(n) * dt
    return MeasurementBuffer(
        t0, t0 + n * dt, t,
        rng.normal(0.0, gyro_scale, (n, 3)),
        rng.uniform(5.0, 15.0, n),
        rng.normal(0.0, 3.0, (n, 3)) + np.array([0.0, 0.0, 9.81]) if accel else None,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
