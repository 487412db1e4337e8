from __future__ import annotations

import numpy as np
import pytest

from dynvio.geometry import quat_to_rot
from dynvio.sim import (AeroConfig, Camera, DatasetError, SensorNoiseConfig, WindField, WorldConfig,
                        aero_force_world, export_dataset, flat_plate_coefficients, generate_trajectory,
                        import_dataset, make_scene, simulate, synthesize_sensors)
from dynvio.sim.dynamics import point_mass_accel, rk4_step


def _flight(duration=2.0, aero=None, wind=None, noise=None, thrust_bias=1.0, kind="circle", params=None):
    ref = generate_trajectory(kind, params or {"radius": 2.0, "speed": 2.0, "height": 1.5}, duration, 0.01)
    truth = simulate(ref, WorldConfig(), aero or AeroConfig(), wind or WindField.none(), 0.01)
    ids, pts = make_scene("room", 200, (12.0, 12.0, 4.0), seed=3)
    log = synthesize_sensors(truth, noise or SensorNoiseConfig(), ids, pts, Camera(), thrust_bias=thrust_bias)
    return log, truth


def test_circle_starts_on_the_x_axis():
    ref = generate_trajectory("circle", {"radius": 1.0, "period": 2 * np.pi, "height": 0.7}, 1.0, 0.01)
    p, _, _ = ref.kinematics(0.0)
    np.testing.assert_allclose(p, [1.0, 0.0, 0.7], atol=1e-15)


def test_hover_is_static_equilibrium():
    ref = generate_trajectory("hover", {"position": (0.0, 0.0, 1.0)}, 1.0, 0.01)
    truth = simulate(ref, WorldConfig(), AeroConfig(), WindField.none(), 0.01)
    np.testing.assert_allclose(truth.p, np.tile([0.0, 0.0, 1.0], (len(truth), 1)), atol=1e-12)
    np.testing.assert_allclose(truth.v, 0.0, atol=1e-12)
    np.testing.assert_allclose(truth.thrust, 9.81, atol=1e-12)
    assert np.all(truth.f_e == 0.0)


def test_gp_random_is_seeded():
    kw = dict(params={"length_scale": 1.0, "variance": 1.0}, duration=3.0, dt=0.01, seed=7)
    a = generate_trajectory("gp-random", **kw)
    b = generate_trajectory("gp-random", **kw)
    assert np.array_equal(a.positions, b.positions)
    c = generate_trajectory("gp-random", **{**kw, "seed": 8})
    assert not np.array_equal(a.positions, c.positions)


@pytest.mark.parametrize("kind,duration,dt", [("spiral", 1.0, 0.01), ("circle", 0.0, 0.01), ("circle", 1.0, -1.0)])
def test_trajectory_errors(kind, duration, dt):
    with pytest.raises(ValueError):
        generate_trajectory(kind, {}, duration, dt)


def test_free_fall_closed_form():
    g = np.array([0.0, 0.0, -9.81])
    p0, v0 = np.array([1.0, -2.0, 30.0]), np.array([0.5, 0.2, 3.0])

    def deriv(t, p, v):
        return v, point_mass_accel(np.eye(3), 0.0, np.zeros(3), g)

    p, v = p0.copy(), v0.copy()
    for k in range(100):
        p, v = rk4_step(deriv, 0.01 * k, p, v, 0.01)
    exact = p0 + v0 + 0.5 * g
    np.testing.assert_allclose(p, exact, rtol=1e-9)


def test_rk4_fourth_order():
    # drag makes the dynamics nonlinear in v; reference is a much finer run
    aero = AeroConfig(fuselage_area=0.05, fuselage_cd=2.0)
    world = WorldConfig()

    def deriv(t, p, v):
        return v, point_mass_accel(np.eye(3), 9.81, aero_force_world(v, np.eye(3), aero, world), world.gravity)

    def run(dt):
        p, v = np.zeros(3), np.array([8.0, -3.0, 2.0])
        for k in range(int(round(1.0 / dt))):
            p, v = rk4_step(deriv, k * dt, p, v, dt)
        return p

    ref = run(0.1 / 8)
    e1 = np.linalg.norm(run(0.1) - ref)
    e2 = np.linalg.norm(run(0.05) - ref)
    assert 12.0 < e1 / e2 < 20.0


def test_fuselage_drag_hand_value():
    aero = AeroConfig(fuselage_area=0.01, fuselage_cd=2.0)
    f = aero_force_world(np.array([2.0, 0.0, 0.0]), np.eye(3), aero, WorldConfig(air_density=1.2))
    np.testing.assert_allclose(f, [-0.048, 0.0, 0.0], atol=1e-15)


def test_flat_plate_at_45_degrees():
    cl, cd = flat_plate_coefficients(np.pi / 4)
    assert cl == pytest.approx(1.0, abs=1e-15)
    assert cd == pytest.approx(1.0, abs=1e-15)


def test_wind_force_zero_without_wind():
    aero = AeroConfig(fuselage_area=0.01, fuselage_cd=2.0)
    _, truth = _flight(aero=aero)
    assert np.all(truth.f_e == 0.0)
    assert np.abs(truth.f_aero).max() > 0.01


def test_wind_force_only_inside_patch():
    aero = AeroConfig(fuselage_area=0.02, fuselage_cd=2.0)
    wind = WindField.patch((0.0, 2.0, 1.5), (0.5, 0.5, 1.0), (4.0, 0.0, 0.0))
    _, truth = _flight(duration=3.2, aero=aero, wind=wind)
    w = np.array([np.linalg.norm(wind.velocity(p)) for p in truth.p])
    fe = np.linalg.norm(truth.f_e, axis=1)
    assert fe.max() > 0.1
    assert np.all(fe[w == 0.0] == 0.0)


def test_noiseless_sensors_are_ideal():
    log, truth = _flight()
    np.testing.assert_allclose(log.gyro, truth.omega, atol=0)
    np.testing.assert_allclose(log.accel, truth.specific_force, atol=0)
    np.testing.assert_allclose(log.thrust, truth.thrust, atol=0)


def test_hover_accelerometer_reads_gravity():
    log, _ = _flight(kind="hover", params={"position": (0.0, 0.0, 1.0)})
    np.testing.assert_allclose(log.accel, np.tile([0.0, 0.0, 9.81], (len(log.accel), 1)), atol=1e-12)


def test_thrust_bias_scales_thrust():
    log, truth = _flight(noise=SensorNoiseConfig(thrust_noise=0.05, seed=4), thrust_bias=1.05)
    assert np.mean(log.thrust / truth.thrust) == pytest.approx(1.05, abs=2e-3)


def test_features_reproject_exactly():
    log, truth = _flight()
    lm = log.landmark_map()
    cam = log.camera
    for fid in (0, 7, 15):
        i = truth.index_of(log.frame_t[fid])
        R = quat_to_rot(truth.q[i])
        for l, uv in log.frame_features(fid).items():
            pc = cam.R_bc.T @ (R.T @ (lm[l] - truth.p[i]) - cam.t_bc)
            np.testing.assert_allclose(cam.project(pc), uv, atol=1e-9)
            assert cam.in_bounds(uv)


def test_sensor_log_deterministic():
    noise = SensorNoiseConfig(gyro_noise=1e-3, accel_noise=0.05, thrust_noise=0.1, pixel_noise=1.0,
                              gyro_bias_walk=1e-4, accel_bias_walk=1e-3, max_features=20, seed=11)
    a, _ = _flight(noise=noise)
    b, _ = _flight(noise=noise)
    assert a.bitwise_equal(b)


def test_feature_cap_keeps_tracks():
    log, _ = _flight(noise=SensorNoiseConfig(max_features=15, seed=2))
    prev = set(log.frame_features(3))
    cur = set(log.frame_features(4))
    assert len(cur) <= 15
    assert len(prev & cur) >= 10


def test_dataset_round_trip(tmp_path):
    log, truth = _flight(duration=1.0, noise=SensorNoiseConfig(gyro_noise=1e-3, accel_noise=0.05, pixel_noise=0.5,
                                                             seed=5))
    export_dataset(log, truth, tmp_path / "d")
    log2, truth2 = import_dataset(tmp_path / "d")
    assert log.equals(log2)
    np.testing.assert_allclose(truth2.p, truth.p, rtol=1e-12)
    np.testing.assert_allclose(truth2.q, truth.q, rtol=1e-12)
    np.testing.assert_allclose(truth2.f_e, truth.f_e, rtol=1e-12)


def test_dataset_without_truth(tmp_path):
    log, truth = _flight(duration=1.0)
    export_dataset(log, truth, tmp_path / "d")
    (tmp_path / "d" / "gt.csv").unlink()
    log2, truth2 = import_dataset(tmp_path / "d")
    assert truth2 is None and log.equals(log2)


def test_dataset_rejects_unsorted(tmp_path):
    log, truth = _flight(duration=1.0)
    d = export_dataset(log, truth, tmp_path / "d")
    lines = (d / "imu.csv").read_text().splitlines()
    lines[2], lines[3] = lines[3], lines[2]
    (d / "imu.csv").write_text("\n".join(lines) + "\n")
    with pytest.raises(DatasetError, match="unsorted"):
        import_dataset(d)


def test_infeasible_reference():
    ref = generate_trajectory("circle", {"radius": 0.2, "speed": 5.0, "z_amplitude": 1.0}, 1.0, 0.01)
    with pytest.raises(ValueError, match="infeasible"):
        simulate(ref, WorldConfig(), AeroConfig(), WindField.none(), 0.01)


def test_config_validation():
    with pytest.raises(ValueError):
        WorldConfig(mass=0.0)
    with pytest.raises(ValueError):
        WorldConfig(gravity=(0.0, 0.0, -3.0))
    with pytest.raises(ValueError):
        SensorNoiseConfig(imu_rate=10.0, cam_rate=20.0)
    with pytest.raises(ValueError):
        AeroConfig(fuselage_area=-1.0)
