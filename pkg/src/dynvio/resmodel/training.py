"""Position/velocity-delta supervision and training of residual-force models."""
from __future__ import annotations

import hashlib
import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from ..geometry import quat_to_rot
from ..preint.integrate import force_sensitivity, preintegrate_dynamics
from ..preint.types import MeasurementBuffer
from .models import LinearDragModel, ResidualForceModel, TCNModel, ZeroModel
from .windows import buffer_windows, sliding_windows

SOURCES = ("mocap", "slam", "sim")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 64
    epochs: int = 30
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    bias_sigma: float = 1e-3
    train_split: float = 0.8
    seed: int = 0
    lr_decay: float = 1.0  # multiplicative per epoch

    def __post_init__(self):
        if not 0 < self.train_split < 1:
            raise ValueError("train_split must be in (0, 1)")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size >= 1 and epochs >= 0 required")

    def hash(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:16]


@dataclass(eq=False)
class TrainingSample:
    """One supervision interval.

    ``alpha_gt`` and ``beta_gt`` are the body-frame position/velocity
    deltas implied by the supervision poses with zero external force.
    ``proxy`` optionally holds one body-velocity proxy per window segment,
    consumed only by the linear-drag variant.
    """

    buf: MeasurementBuffer
    bw: np.ndarray
    alpha_gt: np.ndarray
    beta_gt: np.ndarray
    source: str = "sim"
    disturbance_free: bool = True
    proxy: np.ndarray | None = None
    # cached linear model of the preintegration in the residual forces
    segments: list = field(default=None, repr=False)
    windows: np.ndarray = field(default=None, repr=False)
    r_alpha: np.ndarray = field(default=None, repr=False)
    r_beta: np.ndarray = field(default=None, repr=False)
    A: np.ndarray = field(default=None, repr=False)
    B: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.source not in SOURCES:
            raise ValueError(f"unknown supervision source {self.source!r}")
        self.bw = np.asarray(self.bw, dtype=float).reshape(3)
        d = preintegrate_dynamics(self.buf, self.bw)
        self.segments, self.windows = buffer_windows(self.buf, self.bw)
        self.A, self.B = force_sensitivity(self.buf, self.bw, self.segments)
        self.r_alpha = np.asarray(self.alpha_gt, dtype=float) - d.alpha
        self.r_beta = np.asarray(self.beta_gt, dtype=float) - d.beta
        if self.proxy is not None:
            self.proxy = np.asarray(self.proxy, dtype=float).reshape(len(self.segments), 3)


def supervision_deltas(p0, q0, v0, p1, v1, dt, g):
    """Body-frame position/velocity deltas between two supervision states, zero external force."""
    R0 = quat_to_rot(q0)
    g = np.asarray(g, dtype=float)
    return R0.T @ (p1 - p0 - v0 * dt - 0.5 * g * dt * dt), R0.T @ (v1 - v0 - g * dt)


def samples_from_log(log, truth, interval: float = 0.1, source: str = "sim", gravity=(0.0, 0.0, -9.81),
                     bw=None, with_proxy: bool = False, force_tol: float = 1e-9) -> list[TrainingSample]:
    """Cut a flight into consecutive supervision intervals.

    The gyro bias used for preintegration defaults to the simulator's true
    bias at each interval start (zero when unknown). Intervals where the
    ground truth carries external force are flagged as not disturbance-free.
    """
    g = np.asarray(gravity, dtype=float)
    step = int(round(interval * log.rates.get("imu", 100.0)))
    n = len(truth.t)
    out = []
    for i in range(0, n - step, step):
        j = i + step
        t0, t1 = truth.t[i], truth.t[j]
        buf = MeasurementBuffer.from_log(log, t0, t1)
        if bw is not None:
            b = np.asarray(bw, dtype=float)
        elif log.gyro_bias is not None:
            b = log.gyro_bias[np.searchsorted(log.imu_t, t0 - 1e-9)]
        else:
            b = np.zeros(3)
        a_gt, b_gt = supervision_deltas(truth.p[i], truth.q[i], truth.v[i], truth.p[j], truth.v[j], t1 - t0, g)
        free = bool(np.abs(truth.f_e[i:j + 1]).max() <= force_tol)
        proxy = None
        if with_proxy:
            R = quat_to_rot(truth.q[i:j])
            vb = np.einsum("nji,nj->ni", R, truth.v[i:j])
            proxy = np.array([vb[s:e].mean(axis=0) for s, e in [(s, min(s + 10, step)) for s in range(0, step, 10)]])
        out.append(TrainingSample(buf, b, a_gt, b_gt, source, free, proxy))
    return out


def _stack(samples):
    S = {len(s.segments) for s in samples}
    if len(S) != 1:
        raise ValueError("all samples in a batch need the same number of window segments")
    W = np.stack([s.windows for s in samples])
    A = np.stack([s.A for s in samples])
    B = np.stack([s.B for s in samples])
    ra = np.stack([s.r_alpha for s in samples])
    rb = np.stack([s.r_beta for s in samples])
    P = None
    if all(s.proxy is not None for s in samples):
        P = np.stack([s.proxy for s in samples])
    return W, A, B, ra, rb, P


def _check_free(samples):
    if not samples:
        raise ValueError("empty dataset")
    bad = [k for k, s in enumerate(samples) if not s.disturbance_free]
    if bad:
        raise ValueError(f"training samples {bad[:5]} carry external disturbance")


def _residuals(F, A, B, ra, rb):
    """Delta errors for per-segment forces F (N, S, 3)."""
    ea = ra - np.einsum("nsij,nsj->ni", A, F)
    eb = rb - np.einsum("nsij,nsj->ni", B, F)
    return ea, eb


def loss_and_gradient(model: ResidualForceModel, samples, windows=None, return_forces: bool = False):
    """Mean over samples of ``|alpha_gt - alpha_hat|^2 + |beta_gt - beta_hat|^2`` and its parameter gradient.

    The preintegrated deltas are affine in the per-segment residual forces,
    so the force gradient is formed in closed form and then pulled back
    through the network by reverse-mode accumulation.
    """
    _check_free(samples)
    W, A, B, ra, rb, P = _stack(samples)
    if windows is not None:
        W = windows
    N, S = W.shape[:2]
    flatW = W.reshape(N * S, *W.shape[2:])
    if isinstance(model, TCNModel):
        model.net.zero_grad()
        Ft = model.forward_tensor(flatW).reshape(N, S, 3)
        F = Ft.detach().numpy()
    else:
        F = model.forward_batch(flatW, None if P is None else P.reshape(N * S, 3)).reshape(N, S, 3)
    ea, eb = _residuals(F, A, B, ra, rb)
    L = float((np.sum(ea * ea) + np.sum(eb * eb)) / N)
    if not np.isfinite(L):
        per = np.sum(ea * ea, axis=1) + np.sum(eb * eb, axis=1)
        raise FloatingPointError(f"non-finite loss at sample {int(np.flatnonzero(~np.isfinite(per))[0])}")
    dF = -2.0 / N * (np.einsum("nsij,ni->nsj", A, ea) + np.einsum("nsij,ni->nsj", B, eb))
    if isinstance(model, TCNModel):
        Ft.backward(torch.from_numpy(dF))
        grad = np.concatenate([p.grad.numpy().ravel() for p in model.net.parameters()])
    elif isinstance(model, LinearDragModel):
        U = model._proxies(flatW, None if P is None else P.reshape(N * S, 3))
        grad = -(dF.reshape(N * S, 3).T @ U).ravel()
    else:
        grad = np.zeros(0)
    if return_forces:
        return L, grad, F
    return L, grad


def batch_loss(model, samples) -> float:
    W, A, B, ra, rb, P = _stack(samples)
    N, S = W.shape[:2]
    F = model.forward_batch(W.reshape(N * S, *W.shape[2:]), None if P is None else P.reshape(N * S, 3))
    ea, eb = _residuals(F.reshape(N, S, 3), A, B, ra, rb)
    return float((np.sum(ea * ea) + np.sum(eb * eb)) / N)


@dataclass
class TrainResult:
    model: ResidualForceModel
    train_loss: list
    val_loss: list
    best_epoch: int
    seconds: float
    config_hash: str


def _split(n: int, cfg: TrainConfig):
    perm = np.random.default_rng(cfg.seed).permutation(n)
    k = max(1, int(round(cfg.train_split * n)))
    if k >= n:
        raise ValueError("dataset too small for a train/val split")
    return np.sort(perm[:k]), np.sort(perm[k:])


def _fit_linear_drag(model: LinearDragModel, samples) -> None:
    # the loss is quadratic in D, so its minimizer is a linear least-squares solve
    W, A, B, ra, rb, P = _stack(samples)
    N, S = W.shape[:2]
    U = model._proxies(W.reshape(N * S, *W.shape[2:]), None if P is None else P.reshape(N * S, 3)).reshape(N, S, 3)
    # f_s = -D u_s  =>  A_s f_s = -(A_s kron u_s^T) vec(D)
    Ma = -np.einsum("nsij,nsk->nijk", A, U).reshape(N * 3, 9)
    Mb = -np.einsum("nsij,nsk->nijk", B, U).reshape(N * 3, 9)
    M = np.vstack([Ma, Mb])
    y = np.concatenate([ra.ravel(), rb.ravel()])
    model.set_params(np.linalg.lstsq(M, y, rcond=None)[0])


def train(model: ResidualForceModel, samples: list[TrainingSample], cfg: TrainConfig | None = None,
          log=None) -> TrainResult:
    """Fit ``model`` on disturbance-free samples; returns the best-validation checkpoint.

    TCN: Adam over shuffled mini-batches, gyro-bias augmentation on the
    network input, per-channel input standardization from the training
    split. Linear drag: closed-form least squares. Zero: nothing to fit.
    """
    cfg = cfg or TrainConfig()
    _check_free(samples)
    start = time.perf_counter()
    tr, va = _split(len(samples), cfg)
    train_s = [samples[i] for i in tr]
    val_s = [samples[i] for i in va]
    if isinstance(model, ZeroModel):
        l_tr, l_va = batch_loss(model, train_s), batch_loss(model, val_s)
        return TrainResult(model, [l_tr], [l_va], 0, time.perf_counter() - start, cfg.hash())
    if isinstance(model, LinearDragModel):
        l0 = [batch_loss(model, train_s)], [batch_loss(model, val_s)]
        _fit_linear_drag(model, train_s)
        l0[0].append(batch_loss(model, train_s))
        l0[1].append(batch_loss(model, val_s))
        return TrainResult(model, l0[0], l0[1], 1, time.perf_counter() - start, cfg.hash())
    if not isinstance(model, TCNModel):
        raise TypeError(f"cannot train {type(model).__name__}")

    allw = np.concatenate([s.windows for s in train_s])
    model.mean = allw.mean(axis=(0, 2))
    model.std = np.maximum(allw.std(axis=(0, 2)), 1e-6)
    torch.use_deterministic_algorithms(True)
    opt = torch.optim.Adam(model.net.parameters(), lr=cfg.lr, betas=(cfg.beta1, cfg.beta2), eps=cfg.eps)
    sched = torch.optim.lr_scheduler.ExponentialLR(opt, gamma=cfg.lr_decay)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    train_curve = [batch_loss(model, train_s)]
    val_curve = [batch_loss(model, val_s)]
    best = (val_curve[0], 0, model.get_params())
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(train_s))
        total = 0.0
        for k in range(0, len(order), cfg.batch_size):
            batch = [train_s[i] for i in order[k:k + cfg.batch_size]]
            W = np.stack([s.windows for s in batch])
            if cfg.bias_sigma > 0:
                W = W.copy()
                W[:, :, 1:, :] += rng.normal(0.0, cfg.bias_sigma, size=(len(batch), 1, 3, 1))
            opt.zero_grad()
            L, grad = loss_and_gradient(model, batch, windows=W)
            opt.step()
            total += L * len(batch)
        sched.step()
        train_curve.append(total / len(train_s))
        val_curve.append(batch_loss(model, val_s))
        if not np.isfinite(val_curve[-1]):
            raise FloatingPointError(f"training diverged at epoch {epoch}: validation loss is NaN")
        if val_curve[-1] < best[0]:
            best = (val_curve[-1], epoch, model.get_params())
        if log is not None:
            log(f"epoch {epoch:3d}  train {train_curve[-1]:.4e}  val {val_curve[-1]:.4e}")
    model.set_params(best[2])
    return TrainResult(model, train_curve, val_curve, best[1], time.perf_counter() - start, cfg.hash())


def predict_total_force(model: ResidualForceModel, buf: MeasurementBuffer, bw=None, proxies=None) -> np.ndarray:
    """Body-frame ``f_t + f_res`` at every sample of ``buf`` from centred sliding windows."""
    if buf.thrust is None:
        raise ValueError("buffer has no thrust samples")
    if len(buf) < 10:
        raise ValueError(f"buffer too short: {len(buf)} samples, need 100 ms")
    W = sliding_windows(buf.thrust, buf.gyro, np.zeros(3) if bw is None else bw)
    f = model.forward_batch(W, proxies)
    f[:, 2] += buf.thrust
    return f
