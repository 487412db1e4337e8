"""The twelve acceptance criteria, each printing one PASS/FAIL line.

The end-to-end criteria train their residual models from scratch in a
temporary directory. Set ``DYNVIO_ACCEPTANCE_CACHE`` to a directory to
reuse trained models between sessions.
"""
from __future__ import annotations

import json
import os
import time

import numpy as np
import pytest

from dynvio.estimator import EstimatorConfig
from dynvio.experiments.registry import Context, run_experiment
from dynvio.preint import (correct_bias_change, dynamics_residual, imu_residual, preintegrate_dynamics,
                           preintegrate_imu, residual_jacobians)
from dynvio.resmodel import LinearDragModel, TCNModel, batch_loss, loss_and_gradient

from conftest import random_buffer
from covariance_mc import monte_carlo_covariance
from oracles import euler_preintegration
from test_estimator import _circle_flight, _fill, _sliding_vs_batch, _window
from test_preint import G, fd_jacobian, random_state, taus_of
from test_resmodel import make_sample


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\nACCEPTANCE {n:2d} {'PASS' if ok else 'FAIL'}  {detail}", flush=True)
    return emit


@pytest.fixture(scope="session")
def experiments(tmp_path_factory):
    """Runs each named experiment once per session in a shared context."""
    out = tmp_path_factory.mktemp("acceptance")
    cache = os.environ.get("DYNVIO_ACCEPTANCE_CACHE") or out / "models"
    ctx = Context(out, cache)
    done = {}

    def get(name):
        if name not in done:
            done[name] = run_experiment(name, None, ctx=ctx)
        return done[name]
    return get


def test_01_preintegration_matches_oracle(report):
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        buf = random_buffer(rng, n=20)
        bw = rng.normal(0, 0.05, 3)
        d = preintegrate_dynamics(buf, bw)
        forces = np.zeros((20, 3))
        forces[:, 2] = buf.thrust
        a, b, g = euler_preintegration(taus_of(buf), forces.tolist(), buf.gyro.tolist(), bw.tolist())
        worst = max(worst, np.abs(d.alpha - a).max(), np.abs(d.beta - b).max(), np.abs(d.gamma - g).max())
    seconds = time.perf_counter() - start
    ok = worst <= 1e-12 and seconds < 10.0
    report(1, ok, f"max_abs_diff={worst:.3g} runtime={seconds:.2f}s")
    assert ok


def test_02_covariance_matches_monte_carlo(report):
    start = time.perf_counter()
    emp, P = monte_carlo_covariance(n_draws=10_000, seed=0)
    seconds = time.perf_counter() - start
    rel = np.abs(np.diag(emp) / np.diag(P[:9, :9]) - 1.0)
    ok = rel.max() <= 0.15 and seconds < 120.0
    report(2, ok, f"max_rel_diag_error={rel.max():.3f} runtime={seconds:.1f}s")
    assert ok


def test_03_bias_correction_is_second_order(report):
    rng = np.random.default_rng(5)
    buf = random_buffer(rng, n=20)
    d = preintegrate_dynamics(buf, np.zeros(3))
    direction = np.array([0.3, -1.0, 0.6]) / np.linalg.norm([0.3, -1.0, 0.6])
    steps = np.logspace(-3, -1, 9)
    errs = []
    for s in steps:
        a, b, g = correct_bias_change(d, s * direction)
        ref = preintegrate_dynamics(buf, s * direction)
        errs.append(np.linalg.norm(np.concatenate([a - ref.alpha, b - ref.beta, g - ref.gamma])))
    slope = np.polyfit(np.log(steps), np.log(errs), 1)[0]
    ok = 1.8 <= slope <= 2.2
    report(3, ok, f"log_log_slope={slope:.3f}")
    assert ok


def _residual_jacobian_error(seed):
    rng = np.random.default_rng(seed)
    buf = random_buffer(rng, gyro_scale=0.5)
    xk, x1 = random_state(rng), random_state(rng)
    worst = 0.0
    for kind in ("dynamics", "imu"):
        if kind == "dynamics":
            d = preintegrate_dynamics(buf, xk.b_w + rng.normal(0, 0.005, 3))
            fun = lambda a, b: dynamics_residual(d, a, b, G)[0]  # noqa: E731
        else:
            d = preintegrate_imu(buf, xk.b_w + rng.normal(0, 0.005, 3), xk.b_a + rng.normal(0, 0.01, 3))
            fun = lambda a, b: imu_residual(d, a, b, G)[0]  # noqa: E731
        J = residual_jacobians(d, xk, x1, G)
        for blk in ("p", "th", "v", "ba", "bw", "fe"):
            for i in "01":
                num = fd_jacobian(fun, xk, x1, blk + i)
                ana = J.get(blk + i, np.zeros_like(num))
                worst = max(worst, np.abs(ana - num).max() / max(np.abs(num).max(), 1.0))
    return worst


def _window_jacobian_error(mode, flight):
    log, truth = flight
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
    return np.abs(num - J).max() / np.abs(J).max()


def _param_gradient_error(model, samples, rng, n_check=60, h=1e-5):
    _, grad = loss_and_gradient(model, samples)
    theta = model.get_params()
    worst = 0.0
    for i in rng.choice(len(theta), size=min(n_check, len(theta)), replace=False):
        tp, tm = theta.copy(), theta.copy()
        tp[i] += h
        tm[i] -= h
        model.set_params(tp)
        lp = batch_loss(model, samples)
        model.set_params(tm)
        lm = batch_loss(model, samples)
        num = (lp - lm) / (2 * h)
        worst = max(worst, abs(num - grad[i]) / max(abs(num), 1e-6))
    model.set_params(theta)
    return worst


def test_04_gradient_suites(report):
    res_err = max(_residual_jacobian_error(s) for s in range(5))
    flight = _circle_flight()
    win_err = max(_window_jacobian_error(m, flight) for m in ("vio", "vimo", "vid-fusion", "hdvio"))
    rng = np.random.default_rng(11)
    samples = [make_sample(rng, n=20) for _ in range(3)]
    tcn = TCNModel(seed=3)
    tcn.mean = np.array([10.0, 0.0, 0.0, 0.0])
    tcn.std = np.array([3.0, 0.3, 0.3, 0.3])
    tcn_err = _param_gradient_error(tcn, samples, rng)
    drag_samples = [make_sample(rng, proxy=rng.normal(0, 3, (1, 3))) for _ in range(10)]
    drag_err = _param_gradient_error(LinearDragModel(rng.normal(size=(3, 3))), drag_samples, rng, h=1e-6)
    ok = max(res_err, win_err) <= 1e-5 and max(tcn_err, drag_err) <= 1e-4
    report(4, ok, f"residual_jac={res_err:.2g} window_jac={win_err:.2g} tcn_grad={tcn_err:.2g} "
                  f"linear_drag_grad={drag_err:.2g}")
    assert ok


def test_05_drag_recovery(experiments, report):
    start = time.perf_counter()
    r = experiments("drag-recovery")
    seconds = time.perf_counter() - start
    m = r.metrics
    ok = r.passed and seconds < 30 * 60
    report(5, ok, f"tcn_rmse={m['tcn_rmse_N']:.4f}N zero_rmse={m['zero_rmse_N']:.4f}N ratio={m['ratio']:.3f} "
                  f"(<= 0.5) runtime={seconds / 60:.1f}min")
    assert ok


def test_06_thrust_offset(experiments, report):
    r = experiments("thrust-offset")
    m = r.metrics
    report(6, r.passed, f"z_rmse_hdvio={m['hdvio_rmse_z']:.4f} z_rmse_vimo={m['vimo_rmse_z']:.4f} "
                        f"ratio={m['ratio_z']:.3f} (<= 0.5)")
    assert r.passed


def test_07_wind_circle(experiments, report):
    r = experiments("wind-circle")
    m = r.metrics
    report(7, r.passed, f"norm_rmse hdvio={m['force_norm_rmse_hdvio']:.3f} vimo={m['force_norm_rmse_vimo']:.3f} "
                        f"peak hdvio={m['peak_hdvio']:.3f} true={m['peak_true']:.3f} "
                        f"rel={m['peak_rel_error_hdvio']:.3f} (<= 0.2)")
    assert os.path.exists(r.outputs["force_csv"])
    assert r.passed


def test_08_bias_divergence(experiments, report):
    r = experiments("bias-divergence")
    m = r.metrics
    report(8, r.passed, f"max|b_a hdvio - vio|={max(m['hdvio_deviation']):.4f} (<= 0.05) "
                        f"max|b_a vimo - vio|={max(m['vimo_deviation']):.4f} (>= 0.1)")
    assert r.passed


def test_09_egg_trajectory(experiments, report):
    r = experiments("egg-trajectory")
    m = r.metrics
    report(9, r.passed, f"fast ATE vio={m['ate_fast_vio']:.3f} hdvio={m['ate_fast_hdvio']:.3f} "
                        f"ratio={m['fast_ratio_hdvio_vio']:.3f} (<= 0.7); slow spread={m['slow_spread']:.3f} (<= 1.1)")
    assert r.passed


def test_10_generalization(experiments, report):
    r = experiments("generalization")
    m = r.metrics
    report(10, r.passed, f"ATE full={m['ate_full']:.3f} slow-trained={m['ate_slow']:.3f} "
                         f"degradation={m['degradation']:.3f} (<= 0.15)")
    assert r.passed


def test_11_marginalization_oracle(report):
    worst = 0.0
    for seed, n_vars, dim, window in [(0, 12, 3, 4), (1, 8, 6, 3), (2, 15, 2, 5), (3, 6, 15, 2)]:
        mean_b, cov_b, mean_s, cov_s = _sliding_vs_batch(seed, n_vars, dim, window)
        worst = max(worst, np.abs(mean_s - mean_b).max(), np.abs(cov_s - cov_b).max())
    ok = worst <= 1e-10
    report(11, ok, f"max_abs_diff={worst:.3g}")
    assert ok


def test_12_repro_is_bit_identical(tmp_path, report):
    docs = []
    for k in range(2):
        run_experiment("smoke", tmp_path / f"run{k}", cache_dir=tmp_path / f"cache{k}")
        docs.append(json.loads((tmp_path / f"run{k}" / "smoke" / "metrics.json").read_text()))
    same = docs[0]["metrics"] == docs[1]["metrics"] and docs[0]["config_hash"] == docs[1]["config_hash"]
    report(12, same, f"metrics={len(docs[0]['metrics'])} identical={same}")
    assert same
