from __future__ import annotations

import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dynvio.estimator import (EstimatorConfig, LinearFactor, SlidingWindow, SolverConfig, assemble,
                              marginalize_factors, run_sequence, truth_state)
from dynvio.eval import align_posyaw, ate_translation
from dynvio.geometry import quat_exp, quat_from_yaw, quat_mul, quat_to_rot, so3_log, yaw_rotation
from dynvio.preint import MeasurementBuffer
from dynvio.sim import (AeroConfig, Camera, SensorNoiseConfig, WindField, WorldConfig, generate_trajectory,
                        make_scene, simulate, synthesize_sensors)
from dynvio.sim.trajectory import Reference

from oracles import gaussian_marginal

MODES = ("vio", "vimo", "vid-fusion", "hdvio")


def _window(cfg, camera):
    with warnings.catch_warnings():
        # hdvio without a model is intentional here: the worlds below have no drag
        warnings.simplefilter("ignore", RuntimeWarning)
        return SlidingWindow(cfg, camera)


def _constant_accel_flight(duration=2.0):
    """Straight flight at constant acceleration and fixed attitude.

    The body rate is zero and the body-frame specific force constant, so
    every discrete motion model in the window is exact at the true states.
    """
    a = np.array([0.6, 0.3, 0.1])
    v0 = np.array([0.5, 0.2, 0.0])
    p0 = np.array([0.0, 0.0, 1.5])
    ref = Reference("line", {}, duration, 0.01, lambda t: (p0 + v0 * t + 0.5 * a * t * t, v0 + a * t, a.copy()),
                    yaw_mode="fixed", fixed_yaw=0.3)
    truth = simulate(ref, WorldConfig(), AeroConfig(), WindField.none(), 0.01)
    ids, pts = make_scene("room", 150, (10.0, 10.0, 4.0), seed=1)
    return synthesize_sensors(truth, SensorNoiseConfig(), ids, pts, Camera()), truth


def _circle_flight(duration=3.0, noise=None):
    ref = generate_trajectory("circle", {"radius": 3.0, "speed": 2.0, "height": 1.5}, duration, 0.01)
    truth = simulate(ref, WorldConfig(), AeroConfig(), WindField.none(), 0.01)
    ids, pts = make_scene("room", 80, (14.0, 14.0, 4.0), seed=1)
    log = synthesize_sensors(truth, noise or SensorNoiseConfig(accel_noise=0.01, pixel_noise=0.5, seed=3),
                             ids, pts, Camera())
    return log, truth


@pytest.fixture(scope="module")
def line():
    return _constant_accel_flight()


@pytest.fixture(scope="module")
def circle():
    return _circle_flight()


def _fill(win, log, truth, n, optimize=None, marginalize=False):
    win.initialize(log.frame_t[0], truth_state(truth, log.frame_t[0]), log.frame_features(0))
    for k in range(1, n):
        buf = MeasurementBuffer.from_log(log, log.frame_t[k - 1], log.frame_t[k])
        win.add_measurements(log.frame_t[k], log.frame_features(k), buf)
        if optimize is not None:
            win.optimize(optimize)
        if marginalize:
            win.marginalize()
    return win


def _set_truth(win, log, truth):
    for f in win.frame_ids:
        win.frames[f].state = truth_state(truth, win.frames[f].t)
    lm = log.landmark_map()
    for l in list(win.landmarks):
        win.landmarks[l] = lm[win.lm_id[l]].copy()


# ---- consistency and optimization


@pytest.mark.parametrize("mode", ["vio", "vimo", "hdvio"])
def test_cost_vanishes_at_truth(line, mode):
    log, truth = line
    win = _fill(_window(EstimatorConfig().with_mode(mode), log.camera), log, truth, 6)
    _set_truth(win, log, truth)
    assert len(win.active_landmarks()) > 10
    assert win.total_cost() <= 1e-8


@pytest.mark.parametrize("mode", ["vio", "hdvio"])
def test_perturbed_states_recover(line, mode):
    log, truth = line
    cfg = EstimatorConfig(solver=SolverConfig(mode=mode, max_iters=30, tol_cost=1e-14, tol_step=1e-12))
    win = _fill(_window(cfg, log.camera), log, truth, 6)
    _set_truth(win, log, truth)
    rng = np.random.default_rng(0)
    for f in win.frame_ids[1:]:
        s = win.frames[f].state
        dp = rng.normal(size=3)
        dth = rng.normal(size=3)
        win.frames[f].state = s.copy(p=s.p + 0.01 * dp / np.linalg.norm(dp),
                                     q=quat_mul(s.q, quat_exp(np.deg2rad(0.5) * dth / np.linalg.norm(dth))))
    win.optimize()
    for f in win.frame_ids:
        s, g = win.frames[f].state, truth_state(truth, win.frames[f].t)
        assert np.linalg.norm(s.p - g.p) <= 1e-6
        assert np.linalg.norm(so3_log(quat_to_rot(g.q).T @ quat_to_rot(s.q))) <= 1e-5


def test_zero_iterations_leave_window_unchanged(circle):
    log, truth = circle
    win = _fill(_window(EstimatorConfig().with_mode("hdvio"), log.camera), log, truth, 5)
    before = {f: win.frames[f].state.copy() for f in win.frame_ids}
    lms = {l: x.copy() for l, x in win.landmarks.items()}
    info = win.optimize(0)
    assert info["iterations"] == 0 and len(info["cost"]) == 1
    for f, s in before.items():
        assert np.array_equal(win.frames[f].state.p, s.p) and np.array_equal(win.frames[f].state.q, s.q)
    assert all(np.array_equal(win.landmarks[l], x) for l, x in lms.items())


@pytest.mark.parametrize("mode", MODES)
def test_cost_trace_is_monotone(circle, mode):
    log, truth = circle
    win = _fill(_window(EstimatorConfig().with_mode(mode), log.camera), log, truth, 8, optimize=3, marginalize=True)
    info = win.optimize(10)
    assert np.all(np.diff(info["cost"]) <= 0.0)


@pytest.mark.parametrize("mode", MODES)
def test_stacked_jacobian_matches_finite_differences(circle, mode):
    log, truth = circle
    win = _fill(_window(EstimatorConfig().with_mode(mode), log.camera), log, truth, 9, optimize=2, marginalize=True)
    ct = win.build_cost()
    J = ct.J.toarray()
    num = np.zeros_like(J)
    h = 1e-6
    for j in range(J.shape[1]):
        dx = np.zeros(J.shape[1])
        dx[j] = h
        snap = win._snapshot()
        win._retract(ct.order, ct.offsets, dx)
        rp = win.build_cost().r
        win._restore(snap)
        win._retract(ct.order, ct.offsets, -dx)
        rm = win.build_cost().r
        win._restore(snap)
        num[:, j] = (rp - rm) / (2 * h)
    assert np.abs(num - J).max() <= 1e-5 * np.abs(J).max()


# ---- factor bookkeeping


def test_modes_share_visual_and_inertial_rows(circle):
    log, truth = circle
    cts = {}
    for mode in ("vio", "hdvio"):
        win = _fill(_window(EstimatorConfig().with_mode(mode), log.camera), log, truth, 6)
        _set_truth(win, log, truth)
        cts[mode] = win.build_cost()
    a, b = cts["vio"], cts["hdvio"]
    assert "dynamics" not in a.rows and "dynamics" in b.rows
    for typ in ("imu", "visual"):
        ra = np.concatenate([a.r[i:j] for i, j in a.rows[typ]])
        rb = np.concatenate([b.r[i:j] for i, j in b.rows[typ]])
        assert np.array_equal(ra, rb)


def test_removing_a_landmark_removes_its_rows(circle):
    log, truth = circle
    win = _fill(_window(EstimatorConfig().with_mode("vio"), log.camera), log, truth, 6)
    ct = win.build_cost()
    l = win.active_landmarks()[0]
    n_obs = len(win.tracks[l])
    win._forget_landmark(l)
    ct2 = win.build_cost()
    (a, b), = ct.rows["visual"]
    (a2, b2), = ct2.rows["visual"]
    assert (b - a) - (b2 - a2) == 2 * n_obs
    assert ct2.J.shape[1] == ct.J.shape[1] - 3
    kept = [i for i, key in enumerate(ct.visual_index) if key[1] != l]
    np.testing.assert_array_equal(ct.r[a:b].reshape(-1, 2)[kept], ct2.r[a2:b2].reshape(-1, 2))


def test_first_two_frames_triangulate_exactly(line):
    log, truth = line
    # the baseline between adjacent frames is short; noiseless rays need no parallax gate
    win = _fill(_window(EstimatorConfig(min_parallax_deg=0.01).with_mode("vio"), log.camera), log, truth, 2)
    lm = win.landmark_positions()
    assert len(lm) > 5
    true = log.landmark_map()
    for i, x in lm.items():
        assert np.linalg.norm(x - true[i]) <= 1e-6


def test_frame_without_features(circle):
    log, truth = circle
    win = _fill(_window(EstimatorConfig().with_mode("vio"), log.camera), log, truth, 4)
    buf = MeasurementBuffer.from_log(log, log.frame_t[3], log.frame_t[4])
    fr = win.add_measurements(log.frame_t[4], {}, buf)
    assert fr.fid in win.state_frame_ids and fr.obs == {}
    assert all(f != fr.fid for f, _ in win.build_cost().visual_index)
    win.optimize()


def test_measurement_errors(circle):
    log, truth = circle
    win = _fill(_window(EstimatorConfig().with_mode("vio"), log.camera), log, truth, 3)
    buf = MeasurementBuffer.from_log(log, log.frame_t[0], log.frame_t[1])
    with pytest.raises(ValueError, match="out-of-order"):
        win.add_measurements(log.frame_t[1], {}, buf)
    buf = MeasurementBuffer.from_log(log, log.frame_t[3], log.frame_t[4])
    with pytest.raises(ValueError, match="span"):
        win.add_measurements(log.frame_t[5], {}, buf)


def test_gauge_invariance_without_prior(circle):
    log, truth = circle
    win = _fill(_window(EstimatorConfig().with_mode("hdvio"), log.camera), log, truth, 6, optimize=2)
    win.prior = None
    c0 = win.total_cost()
    yaw, t = 0.7, np.array([1.0, -2.0, 0.5])
    Rz, qz = yaw_rotation(yaw), quat_from_yaw(yaw)
    for f in win.frame_ids:
        s = win.frames[f].state
        win.frames[f].state = s.copy(p=Rz @ s.p + t, q=quat_mul(qz, s.q), v=Rz @ s.v)
    for l in win.landmarks:
        win.landmarks[l] = Rz @ win.landmarks[l] + t
    assert win.total_cost() == pytest.approx(c0, rel=1e-9, abs=1e-12)


# ---- vid-fusion force prior


def _hover_window(thrust_bias=1.0, wind=None, aero=None):
    ref = generate_trajectory("hover", {"position": (0.0, 0.0, 1.5)}, 1.0, 0.01)
    truth = simulate(ref, WorldConfig(), aero or AeroConfig(), wind or WindField.none(), 0.01)
    ids, pts = make_scene("room", 80, (10.0, 10.0, 4.0), seed=1)
    log = synthesize_sensors(truth, SensorNoiseConfig(), ids, pts, Camera(), thrust_bias=thrust_bias)
    win = _fill(_window(EstimatorConfig().with_mode("vid-fusion"), log.camera), log, truth, 3)
    return win, truth


def test_vid_fusion_prior_zero_in_calibrated_hover():
    win, _ = _hover_window()
    np.testing.assert_allclose(win.vid_fusion_force_prior(0), 0.0, atol=1e-12)


def test_vid_fusion_prior_absorbs_thrust_bias():
    win, _ = _hover_window(thrust_bias=1.05)
    np.testing.assert_allclose(win.vid_fusion_force_prior(0), [0.0, 0.0, -0.05 * 9.81], atol=1e-12)


def test_vid_fusion_prior_recovers_wind_force():
    win, truth = _hover_window(wind=WindField.constant((3.0, 0.0, 0.0)),
                               aero=AeroConfig(fuselage_area=0.02, fuselage_cd=2.0))
    i = truth.index_of(win.frames[0].t)
    assert np.linalg.norm(truth.f_e[i]) > 0.1
    np.testing.assert_allclose(win.vid_fusion_force_prior(0), truth.f_e[i], atol=1e-9)


# ---- marginalization


def _random_factor(rng, keys, dims, m=None):
    m = m or sum(dims[k] for k in keys)
    return LinearFactor(list(keys), {k: rng.normal(size=(m, dims[k])) for k in keys}, rng.normal(size=m))


def _prior_factor(prior):
    offs = prior.offsets()
    return LinearFactor(list(prior.keys), {k: prior.J[:, offs[k]:offs[k] + prior.dims[k]] for k in prior.keys},
                        prior.r0)


def _posterior(factors, order, dims):
    H, b, offs = assemble(factors, order, dims)
    cov = np.linalg.inv(H)
    return -cov @ b, cov, offs


def _sliding_vs_batch(seed, n_vars, dim, window):
    """Chain of variables with unary and pairwise factors, marginalized one at a time."""
    rng = np.random.default_rng(seed)
    keys = list(range(n_vars))
    dims = {k: dim for k in keys}
    factors = [_random_factor(rng, [keys[0]], dims)]
    for k in keys[1:]:
        factors.append(_random_factor(rng, [k - 1, k], dims))
        factors.append(_random_factor(rng, [k], dims, m=1))
    # batch posterior over everything, then restricted to the last `window` variables
    H, b, offs = assemble(factors, keys, dims)
    keep_keys = keys[-window:]
    keep = np.concatenate([np.arange(offs[k], offs[k] + dim) for k in keep_keys])
    mean_b, cov_b = gaussian_marginal(H, -b, keep)
    # sequential: fold each old variable into a prior as soon as it leaves the window
    active, prior = [], None
    pending = list(factors)
    for k in keys:
        active.append(k)
        if len(active) > window:
            old = active.pop(0)
            mine = [f for f in pending if old in f.keys]
            pending = [f for f in pending if old not in f.keys]
            if prior is not None:
                mine.append(_prior_factor(prior))
            prior = marginalize_factors(mine, [old], dims, {kk: 0.0 for kk in keys})
            assert prior.size <= sum(dims[kk] for kk in active)
    final = pending + ([_prior_factor(prior)] if prior is not None else [])
    mean_s, cov_s, _ = _posterior(final, keep_keys, dims)
    return mean_b, cov_b, mean_s, cov_s


def test_sliding_marginalization_matches_batch_posterior():
    mean_b, cov_b, mean_s, cov_s = _sliding_vs_batch(0, 12, 3, 4)
    np.testing.assert_allclose(mean_s, mean_b, atol=1e-10)
    np.testing.assert_allclose(cov_s, cov_b, atol=1e-10)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), n_vars=st.integers(3, 9), dim=st.integers(1, 4), window=st.integers(1, 3))
def test_marginalization_property(seed, n_vars, dim, window):
    mean_b, cov_b, mean_s, cov_s = _sliding_vs_batch(seed, n_vars, dim, window)
    scale = max(1.0, np.abs(cov_b).max(), np.abs(mean_b).max())
    assert np.abs(mean_s - mean_b).max() <= 1e-10 * scale
    assert np.abs(cov_s - cov_b).max() <= 1e-10 * scale


def test_block_diagonal_marginalization_drops_rows():
    rng = np.random.default_rng(1)
    dims = {"a": 2, "b": 3}
    fa = _random_factor(rng, ["a"], dims)
    fb = _random_factor(rng, ["b"], dims)
    prior = marginalize_factors([fa, fb], ["a"], dims, {"a": 0.0, "b": 0.0})
    assert prior.keys == ["b"]
    np.testing.assert_allclose(prior.H, fb.J["b"].T @ fb.J["b"], atol=1e-12)
    np.testing.assert_allclose(prior.J.T @ prior.r0, fb.J["b"].T @ fb.r, atol=1e-12)


def test_window_prior_stays_bounded_and_psd(circle):
    log, truth = circle
    win = _window(EstimatorConfig().with_mode("hdvio"), log.camera)
    win.initialize(log.frame_t[0], truth_state(truth, log.frame_t[0]), log.frame_features(0))
    for k in range(1, len(log.frame_t)):
        win.add_measurements(log.frame_t[k], log.frame_features(k),
                             MeasurementBuffer.from_log(log, log.frame_t[k - 1], log.frame_t[k]))
        win.optimize(2)
        win.marginalize()
        pr = win.prior
        assert len(win.keyframe_ids) <= win.cfg.n_keyframes + 1
        assert len(win.state_frame_ids) <= win.cfg.n_states
        assert all(key[0] != "lm" for key in pr.keys)
        assert pr.J.shape[1] == pr.size
        assert pr.J.shape[0] <= pr.size
        present = set(win.frame_ids)
        assert all(key[1] in present for key in pr.keys)
        assert np.linalg.eigvalsh(pr.H).min() >= -1e-9 * max(1.0, np.abs(pr.H).max())


# ---- whole sequences


def test_run_is_deterministic():
    log, truth = _circle_flight(duration=1.5)
    cfg = EstimatorConfig().with_mode("hdvio")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        a = run_sequence(log, None, cfg, truth)
        b = run_sequence(log, None, cfg, truth)
    for name in ("t", "p", "q", "v", "b_a", "b_w", "f_e"):
        assert np.array_equal(getattr(a, name), getattr(b, name))
    assert [d["cost"] for d in a.diag] == [d["cost"] for d in b.diag]


def test_noiseless_circle_vio_is_accurate():
    ref = generate_trajectory("circle", {"radius": 3.0, "speed": 2.0, "height": 1.5}, 10.0, 0.01)
    truth = simulate(ref, WorldConfig(), AeroConfig(), WindField.none(), 0.01)
    ids, pts = make_scene("room", 400, (14.0, 14.0, 4.0), seed=0)
    log = synthesize_sensors(truth, SensorNoiseConfig(), ids, pts, Camera())
    res = run_sequence(log, None, EstimatorConfig(pixel_sigma=0.1).with_mode("vio"), truth)
    assert len(res) == len(log.frame_t)
    pair = align_posyaw(res.t, res.p, res.q, truth.t, truth.p, truth.q)
    assert ate_translation(pair) <= 1e-3
