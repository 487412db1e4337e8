"""Sliding-window state, factor construction, Levenberg-Marquardt and marginalization."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from ..geometry import quat_exp, quat_log, quat_mul, quat_conj, quat_to_rot, right_jacobian_inv
from ..preint import (DroneState, MeasurementBuffer, PreintegratedDelta, dynamics_residual, imu_residual,
                      needs_repreintegration, preintegrate_dynamics, preintegrate_imu, residual_jacobians)
from ..resmodel.models import ResidualForceModel, ZeroModel
from ..resmodel.windows import buffer_windows
from ..sim.config import Camera
from .config import EstimatorConfig
from .marginal import LinearFactor, MarginalPrior, marginalize_factors
from .visual import bearing_world, max_ray_angle, reprojection, triangulate_midpoint

POSE, SB, LM = "pose", "sb", "lm"
DIMS = {POSE: 6, SB: 12, LM: 3}
# state-vector blocks inside the speed/bias/force variable
SB_SLICES = {"v": slice(0, 3), "ba": slice(3, 6), "bw": slice(6, 9), "fe": slice(9, 12)}
POSE_SLICES = {"p": slice(0, 3), "th": slice(3, 6)}


def key_dim(key) -> int:
    return DIMS[key[0]]


@dataclass
class Interval:
    """Sensor data and preintegrated factors between a frame and the next one."""

    buf: MeasurementBuffer
    imu: PreintegratedDelta
    dyn: PreintegratedDelta | None = None
    accel_minus_thrust: np.ndarray | None = None  # time-averaged a_hat - f_t, for the VID-Fusion prior
    sqrt_imu: np.ndarray | None = None
    sqrt_dyn: np.ndarray | None = None


@dataclass
class Frame:
    fid: int
    t: float
    state: DroneState
    keyframe: bool = False
    obs: dict = field(default_factory=dict)  # landmark id -> pixel
    next: Interval | None = None


@dataclass
class CostTerms:
    """Whitened stacked residual, its sparse Jacobian and bookkeeping."""

    r: np.ndarray
    J: sp.csr_matrix
    cost: float
    order: list
    offsets: dict
    n_state: int
    rows: dict  # factor type -> list of (start, stop)
    visual_index: list = field(default_factory=list)  # (frame id, landmark id) per visual factor


def _sqrt_info(W: np.ndarray) -> np.ndarray:
    """Upper factor ``U`` with ``U^T U = W`` so that ``|U e|^2 = e^T W e``."""
    try:
        return np.linalg.cholesky(W).T
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(0.5 * (W + W.T))
        return (V * np.sqrt(np.clip(w, 0.0, None))).T


class SlidingWindow:
    """Keyframe poses, recent drone states, landmarks and the marginal prior."""

    def __init__(self, config: EstimatorConfig, camera: Camera, model: ResidualForceModel | None = None):
        self.cfg = config
        self.mode = config.mode
        self.camera = camera
        self.model = model if model is not None else ZeroModel()
        if self.mode == "hdvio" and model is None:
            warnings.warn("hdvio mode without a residual model behaves like vimo", RuntimeWarning)
        self.g = np.asarray(config.gravity, dtype=float)
        self.frames: dict[int, Frame] = {}
        self.landmarks: dict[int, np.ndarray] = {}
        self.tracks: dict[int, dict] = {}  # landmark key -> {frame id: pixel}
        # feature ids map to internal landmark keys; a marginalized landmark's id
        # gets a fresh key when it is observed again
        self.lm_key: dict[int, int] = {}
        self.lm_id: dict[int, int] = {}
        self._next_lm = 0
        self.prior: MarginalPrior | None = None
        self.n_added = 0
        self.finished: list[Frame] = []
        self._sb_ids: list[int] = []

    # ---- bookkeeping
    @property
    def frame_ids(self) -> list[int]:
        return list(self.frames)

    @property
    def state_frame_ids(self) -> list[int]:
        """Frames whose speed/bias/force block is still a variable."""
        return list(self._sb_ids)

    @property
    def keyframe_ids(self) -> list[int]:
        return [f for f, fr in self.frames.items() if fr.keyframe]

    def active_landmarks(self) -> list[int]:
        return [l for l in sorted(self.landmarks) if len(self.tracks.get(l, ())) >= 2]

    # ---- initialization and measurements
    def initialize(self, t: float, state: DroneState, features: dict | None = None) -> Frame:
        if self.frames:
            raise ValueError("window already initialized")
        fr = Frame(0, float(t), state.copy(), keyframe=True)
        self._sb_ids = [0]
        self.frames[0] = fr
        c = self.cfg
        sig = np.concatenate([np.full(3, c.prior_sigma_p), np.full(3, c.prior_sigma_th)])
        sig_sb = np.concatenate([np.full(3, c.prior_sigma_v), np.full(3, c.prior_sigma_ba),
                                 np.full(3, c.prior_sigma_bw), np.full(3, c.prior_sigma_fe)])
        J = np.diag(1.0 / np.concatenate([sig, sig_sb]))
        self.prior = MarginalPrior([(POSE, 0), (SB, 0)], {(POSE, 0): 6, (SB, 0): 12}, J, np.zeros(18),
                                   {(POSE, 0): fr.state.copy(), (SB, 0): fr.state.copy()})
        self._add_observations(fr, features or {})
        self.n_added = 1
        return fr

    def _forces(self, buf: MeasurementBuffer, state: DroneState):
        if self.mode != "hdvio" or isinstance(self.model, ZeroModel):
            return None
        segs, W = buffer_windows(buf, state.b_w)
        proxies = None
        if self.model.uses_proxy:
            proxies = np.tile(quat_to_rot(state.q).T @ state.v, (len(segs), 1))
        f = self.model.forward_batch(W, proxies)
        out = np.empty((len(buf), 3))
        for (s, e), fj in zip(segs, f):
            out[s:e] = fj
        return out

    def _integrate(self, buf: MeasurementBuffer, state: DroneState) -> Interval:
        imu = preintegrate_imu(buf, state.b_w, state.b_a, self.cfg.imu)
        iv = Interval(buf, imu, sqrt_imu=_sqrt_info(np.linalg.pinv(imu.P, hermitian=True)))
        if self.mode != "vio":
            iv.dyn = preintegrate_dynamics(buf, state.b_w, self._forces(buf, state), self.cfg.dynamics)
            iv.sqrt_dyn = None
        if self.mode == "vid-fusion":
            if buf.accel is None:
                raise ValueError("vid-fusion mode needs the accelerometer stream")
            f_t = np.zeros_like(buf.accel)
            f_t[:, 2] = buf.thrust
            w = buf.dts / buf.dts.sum()
            iv.accel_minus_thrust = w @ (buf.accel - f_t)
        return iv

    def vid_fusion_force_prior(self, fid: int) -> np.ndarray:
        """Mean of (a_hat - b_a) - f_t over the interval after frame ``fid``."""
        fr = self.frames[fid]
        if fr.next is None or fr.next.accel_minus_thrust is None:
            raise ValueError("no accelerometer-minus-thrust average for this interval")
        return fr.next.accel_minus_thrust - fr.state.b_a

    def add_measurements(self, t: float, features: dict, buf: MeasurementBuffer) -> Frame:
        """Append a frame: preintegrate from the last frame, propagate, triangulate."""
        if not self.frames:
            raise ValueError("initialize the window first")
        last = self.frames[self.frame_ids[-1]]
        if t <= last.t:
            raise ValueError(f"out-of-order frame: t={t} after t={last.t}")
        if abs(buf.t0 - last.t) > 1e-6 or abs(buf.t1 - t) > 1e-6:
            raise ValueError("measurement buffer does not span the inter-frame gap")
        last.next = self._integrate(buf, last.state)
        fid = max(self.frames) + 1
        fr = Frame(fid, float(t), self._propagate(last), keyframe=False)
        self.frames[fid] = fr
        self._sb_ids.append(fid)
        fr.keyframe = self._is_keyframe(fr, features)
        self._add_observations(fr, features)
        self.n_added += 1
        self._triangulate_new()
        return fr

    def _propagate(self, last: Frame) -> DroneState:
        x = last.state
        iv = last.next
        R = quat_to_rot(x.q)
        if self.mode == "vio":
            a, b, gam = iv.imu.alpha, iv.imu.beta, iv.imu.gamma
            fe = np.zeros(3)
        else:
            a, b, gam = iv.dyn.alpha, iv.dyn.beta, iv.dyn.gamma
            fe = x.f_e
        dt = iv.imu.dt
        p = x.p + x.v * dt + 0.5 * self.g * dt * dt + R @ (a + 0.5 * fe * dt * dt)
        v = x.v + self.g * dt + R @ (b + fe * dt)
        q = quat_mul(x.q, gam)
        return DroneState(p, q, v, x.b_a, x.b_w, x.f_e)

    def _is_keyframe(self, fr: Frame, features: dict) -> bool:
        if self.n_added % self.cfg.keyframe_every == 0:
            return True
        kfs = self.keyframe_ids
        if not kfs:
            return True
        ref = self.frames[kfs[-1]].obs
        common = [l for l in features if self.lm_key.get(int(l)) in ref]
        if not common:
            return bool(features)
        disp = np.median([np.linalg.norm(np.asarray(features[l]) - ref[self.lm_key[int(l)]]) for l in common])
        return bool(disp > self.cfg.keyframe_parallax_px)

    def _add_observations(self, fr: Frame, features: dict):
        for ext, uv in features.items():
            ext = int(ext)
            if ext not in self.lm_key:
                self.lm_key[ext] = self._next_lm
                self.lm_id[self._next_lm] = ext
                self._next_lm += 1
            l = self.lm_key[ext]
            uv = np.asarray(uv, dtype=float)
            fr.obs[l] = uv
            self.tracks.setdefault(l, {})[fr.fid] = uv

    def landmark_positions(self) -> dict[int, np.ndarray]:
        """Current landmark estimates keyed by feature id."""
        return {self.lm_id[l]: x.copy() for l, x in self.landmarks.items()}

    def _forget_landmark(self, l: int):
        self.tracks.pop(l, None)
        self.landmarks.pop(l, None)
        ext = self.lm_id.pop(l, None)
        if ext is not None and self.lm_key.get(ext) == l:
            del self.lm_key[ext]

    def triangulate(self, lid: int, poses: dict | None = None) -> np.ndarray | None:
        """Midpoint triangulation of one landmark from its window observations.

        ``poses`` optionally overrides frame poses as ``{fid: (p, q)}``.
        Returns ``None`` when the rays are too parallel or the point lies
        behind a camera.
        """
        obs = self.tracks.get(lid, {})
        if len(obs) < 2:
            return None
        cs, ds = [], []
        for fid, uv in obs.items():
            p, q = poses[fid] if poses is not None else (self.frames[fid].state.p, self.frames[fid].state.q)
            cs.append(p + quat_to_rot(q) @ self.camera.t_bc)
            ds.append(bearing_world(self.camera, q, uv))
        cs, ds = np.array(cs), np.array(ds)
        if max_ray_angle(ds) < np.deg2rad(self.cfg.min_parallax_deg):
            return None
        try:
            x, depth = triangulate_midpoint(cs, ds)
        except np.linalg.LinAlgError:
            return None
        if np.any(depth < self.cfg.min_depth):
            return None
        return x

    def _triangulate_new(self):
        for l, obs in self.tracks.items():
            if l not in self.landmarks and len(obs) >= 2:
                x = self.triangulate(l)
                if x is not None:
                    self.landmarks[l] = x

    # ---- variables
    def variable_order(self) -> tuple[list, list]:
        states = [(POSE, f) for f in self.frame_ids] + [(SB, f) for f in self._sb_ids]
        lms = [(LM, l) for l in self.active_landmarks()]
        return states, lms

    def _get(self, key):
        kind, i = key
        if kind == LM:
            return self.landmarks[i]
        return self.frames[i].state

    def _retract(self, order, offsets, dx):
        for key in order:
            o = offsets[key]
            d = dx[o:o + key_dim(key)]
            kind, i = key
            if kind == LM:
                self.landmarks[i] = self.landmarks[i] + d
            elif kind == POSE:
                s = self.frames[i].state
                self.frames[i].state = s.copy(p=s.p + d[0:3], q=quat_mul(s.q, quat_exp(d[3:6])))
            else:
                s = self.frames[i].state
                self.frames[i].state = s.copy(v=s.v + d[0:3], b_a=s.b_a + d[3:6], b_w=s.b_w + d[6:9],
                                              f_e=s.f_e + d[9:12])

    def _snapshot(self):
        return ({f: fr.state.copy() for f, fr in self.frames.items()}, {l: x.copy() for l, x in self.landmarks.items()})

    def _restore(self, snap):
        states, lms = snap
        for f, s in states.items():
            self.frames[f].state = s
        self.landmarks.update(lms)

    # ---- factors
    def _refresh_interval(self, fid: int):
        """Re-preintegrate when the bias estimate moved past the first-order threshold."""
        fr = self.frames[fid]
        iv = fr.next
        x = fr.state
        if needs_repreintegration(iv.imu, x.b_w) or (iv.imu.ba_bar is not None and
                                                      np.linalg.norm(x.b_a - iv.imu.ba_bar) > 0.5):
            new = self._integrate(iv.buf, x)
            fr.next = new
        elif iv.dyn is not None and needs_repreintegration(iv.dyn, x.b_w):
            fr.next.dyn = preintegrate_dynamics(iv.buf, x.b_w, self._forces(iv.buf, x), self.cfg.dynamics)
            fr.next.sqrt_dyn = None

    def state_factors(self):
        """Non-visual factors as ``(type, keys, residual, {key: jacobian})`` whitened."""
        out = []
        sb = self._sb_ids
        w_f = self.cfg.solver.w_f
        for a, b in zip(sb[:-1], sb[1:]):
            fa, fb = self.frames[a], self.frames[b]
            iv = fa.next
            xa, xb = fa.state, fb.state
            e, _ = imu_residual(iv.imu, xa, xb, self.g)
            J = residual_jacobians(iv.imu, xa, xb, self.g)
            U = iv.sqrt_imu
            out.append(("imu", *self._pack(U, e, J, a, b)))
            if iv.dyn is not None:
                fe_mean = None
                if self.mode == "vid-fusion":
                    fe_mean = iv.accel_minus_thrust - xa.b_a
                e, W = dynamics_residual(iv.dyn, xa, xb, self.g, fe_mean=fe_mean, w_f=w_f)
                if iv.sqrt_dyn is None:
                    iv.sqrt_dyn = _sqrt_info(W)
                J = residual_jacobians(iv.dyn, xa, xb, self.g)
                if self.mode == "vid-fusion":
                    J["ba0"] = np.zeros((9, 3))
                    J["ba0"][6:9] = np.eye(3)
                out.append(("dynamics", *self._pack(iv.sqrt_dyn, e, J, a, b)))
        # states without an outgoing dynamics factor still get the zero-mean force prior
        sw = np.sqrt(w_f)
        for f in sb:
            if self.mode == "vio" or f == sb[-1]:
                Jf = np.zeros((3, 12))
                Jf[:, 9:12] = sw * np.eye(3)
                out.append(("force_prior", [(SB, f)], sw * self.frames[f].state.f_e, {(SB, f): Jf}))
        if self.prior is not None:
            r, J = self._prior_linearization()
            out.append(("prior", list(self.prior.keys), r, J))
        return out

    def _pack(self, U, e, J, a, b):
        blocks = {(POSE, a): np.zeros((len(e), 6)), (SB, a): np.zeros((len(e), 12)),
                  (POSE, b): np.zeros((len(e), 6)), (SB, b): np.zeros((len(e), 12))}
        for name, Jk in J.items():
            blk, idx = name[:-1], name[-1]
            f = a if idx == "0" else b
            if blk in POSE_SLICES:
                blocks[(POSE, f)][:, POSE_SLICES[blk]] = Jk
            else:
                blocks[(SB, f)][:, SB_SLICES[blk]] = Jk
        return list(blocks), U @ e, {k: U @ v for k, v in blocks.items()}

    def _prior_linearization(self):
        pr = self.prior
        dx = []
        J = {}
        offs = pr.offsets()
        for key in pr.keys:
            x, x0 = self._get(key), pr.x0[key]
            o, n = offs[key], pr.dims[key]
            Jk = pr.J[:, o:o + n].copy()
            if key[0] == POSE:
                dth = quat_log(quat_mul(quat_conj(x0.q), x.q))
                dx.append(np.concatenate([x.p - x0.p, dth]))
                Jk[:, 3:6] = Jk[:, 3:6] @ right_jacobian_inv(dth)
            elif key[0] == SB:
                dx.append(np.concatenate([x.v - x0.v, x.b_a - x0.b_a, x.b_w - x0.b_w, x.f_e - x0.f_e]))
            else:
                dx.append(x - x0)
            J[key] = Jk
        r = pr.r0 + pr.J @ np.concatenate(dx)
        return r, J

    def visual_factors(self, lms=None):
        """Whitened, Huber-reweighted reprojection rows of all observations of ``lms``.

        Returns ``(fids, lids, r (N,2), J_pose (N,2,6), J_lm (N,2,3), cost)``
        where ``cost`` is the true Huber cost of the observations.
        """
        lms = self.active_landmarks() if lms is None else lms
        fids, lids, uvs = [], [], []
        for l in lms:
            for f, uv in self.tracks[l].items():
                fids.append(f)
                lids.append(l)
                uvs.append(uv)
        if not fids:
            return [], [], np.zeros((0, 2)), np.zeros((0, 2, 6)), np.zeros((0, 2, 3)), 0.0
        ids = list(self.frames)
        pos = {f: i for i, f in enumerate(ids)}
        sel = np.array([pos[f] for f in fids])
        R = quat_to_rot(np.array([self.frames[f].state.q for f in ids]))[sel]
        P = np.array([self.frames[f].state.p for f in ids])[sel]
        L = np.array([self.landmarks[l] for l in lids])
        e, _, Jp, Jth, Jl = reprojection(self.camera, R, P, L, np.array(uvs))
        sig, k = self.cfg.pixel_sigma, self.cfg.solver.huber_px
        s = np.linalg.norm(e, axis=1)
        w = np.where(s <= k, 1.0, k / np.maximum(s, 1e-300))
        cost = float(np.sum(np.where(s <= k, s * s, 2 * k * s - k * k)) / sig**2)
        scale = (np.sqrt(w) / sig)[:, None]
        Jpose = np.concatenate([Jp, Jth], axis=2) * scale[:, :, None]
        return fids, lids, e * scale, Jpose, Jl * scale[:, :, None], cost

    def build_cost(self) -> CostTerms:
        """Whitened residuals and sparse Jacobian of every factor in the window."""
        for f in self._sb_ids[:-1]:
            self._refresh_interval(f)
        states, lms = self.variable_order()
        order = states + lms
        offsets, n = {}, 0
        for k in order:
            offsets[k] = n
            n += key_dim(k)
        n_state = sum(key_dim(k) for k in states)
        rows, cols, vals, res = [], [], [], []
        row_ranges: dict = {}
        r0 = 0
        cost = 0.0
        for typ, keys, r, J in self.state_factors():
            m = len(r)
            for k in keys:
                blk = J[k]
                ii, jj = np.nonzero(np.ones_like(blk, dtype=bool))
                rows.append(r0 + ii)
                cols.append(offsets[k] + jj)
                vals.append(blk.ravel())
            res.append(r)
            row_ranges.setdefault(typ, []).append((r0, r0 + m))
            cost += float(r @ r)
            r0 += m
        fids, lids, rv, Jpose, Jl, vcost = self.visual_factors([k[1] for k in lms])
        vindex = list(zip(fids, lids))
        if fids:
            cost += vcost
            nv = len(fids)
            base = r0 + 2 * np.arange(nv)
            for blocks, col0 in ((Jpose, [offsets[(POSE, f)] for f in fids]), (Jl, [offsets[(LM, l)] for l in lids])):
                width = blocks.shape[2]
                ii = base[:, None, None] + np.arange(2)[None, :, None]
                jj = np.asarray(col0)[:, None, None] + np.arange(width)[None, None, :]
                rows.append(np.broadcast_to(ii, blocks.shape).ravel())
                cols.append(np.broadcast_to(jj, blocks.shape).ravel())
                vals.append(blocks.ravel())
            res.append(rv.ravel())
            row_ranges["visual"] = [(r0, r0 + 2 * nv)]
            r0 += 2 * nv
        r = np.concatenate(res) if res else np.zeros(0)
        J = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(r0, n))
        return CostTerms(r, J, cost, order, offsets, n_state, row_ranges, vindex)

    def total_cost(self) -> float:
        return self.build_cost().cost

    # ---- solver
    def _solve(self, ct: CostTerms, lam: float):
        H = (ct.J.T @ ct.J).tocsr()
        g = ct.J.T @ ct.r
        n, ns = len(g), ct.n_state
        d = H.diagonal()
        Dm = np.maximum(d, self.cfg.solver.min_diag)
        Hs = H[:ns, :ns].toarray() + np.diag(lam * Dm[:ns])
        nl = (n - ns) // 3
        if nl == 0:
            return self._dense_solve(Hs, -g[:ns])
        Hsl = H[:ns, ns:].toarray()
        Hll = H[ns:, ns:].tocoo()
        blocks = np.zeros((nl, 3, 3))
        np.add.at(blocks, (Hll.row // 3, Hll.row % 3, Hll.col % 3), Hll.data)
        blocks[:, [0, 1, 2], [0, 1, 2]] += lam * Dm[ns:].reshape(nl, 3)
        inv = np.linalg.inv(blocks)
        T = np.einsum("snk,nkj->snj", Hsl.reshape(ns, nl, 3), inv).reshape(ns, nl * 3)
        S = Hs - T @ Hsl.T
        gl = g[ns:]
        dxs = self._dense_solve(0.5 * (S + S.T), -g[:ns] + T @ gl)
        dxl = -np.einsum("nij,nj->ni", inv, (gl + Hsl.T @ dxs).reshape(nl, 3)).ravel()
        return np.concatenate([dxs, dxl])

    def _dense_solve(self, A, b):
        try:
            L = np.linalg.cholesky(A)
            y = np.linalg.solve(L, b)
            return np.linalg.solve(L.T, y)
        except np.linalg.LinAlgError:
            x, _, rank, _ = np.linalg.lstsq(A, b, rcond=None)
            if not np.all(np.isfinite(x)):
                raise np.linalg.LinAlgError(f"normal equations unsolvable (rank {rank} of {len(b)})")
            warnings.warn(f"normal equations rank-deficient (rank {rank} of {len(b)})", RuntimeWarning)
            return x

    def optimize(self, max_iters: int | None = None) -> dict:
        """Levenberg-Marquardt on the window; returns the accepted-cost trace."""
        sc = self.cfg.solver
        iters = sc.max_iters if max_iters is None else max_iters
        ct = self.build_cost()
        trace = [ct.cost]
        lam = sc.damping
        it = 0
        rejected = 0
        for it in range(1, iters + 1):
            dx = self._solve(ct, lam)
            snap = self._snapshot()
            self._retract(ct.order, ct.offsets, dx)
            new = self.build_cost()
            if np.isfinite(new.cost) and new.cost <= ct.cost:
                rel = (ct.cost - new.cost) / max(ct.cost, 1e-300)
                ct = new
                trace.append(ct.cost)
                lam = max(lam / sc.damping_down, 1e-15)
                if np.linalg.norm(dx) < sc.tol_step or rel < sc.tol_cost:
                    break
            else:
                self._restore(snap)
                rejected += 1
                lam *= sc.damping_up
                if lam > 1e8:
                    break
        return {"cost": trace, "iterations": it if iters else 0, "rejected": rejected}

    # ---- marginalization
    def _drop_frame_observations(self, fid: int):
        fr = self.frames[fid]
        for l in fr.obs:
            tr = self.tracks.get(l)
            if tr is not None:
                tr.pop(fid, None)
        fr.obs = {}

    def _cleanup_landmarks(self):
        window = set(self.frames)
        for l in list(self.tracks):
            tr = {f: uv for f, uv in self.tracks[l].items() if f in window}
            if not tr:
                self._forget_landmark(l)
                continue
            self.tracks[l] = tr
            if len(tr) < 2:
                # one view cannot hold a landmark; it is re-triangulated if seen again
                self.landmarks.pop(l, None)

    def _marginalize_keys(self, drop: list, extra: list | None = None):
        factors = list(extra or [])
        for typ, keys, r, J in self.state_factors():
            if typ == "prior" or any(k in drop for k in keys):
                factors.append(LinearFactor(keys, J, r))
        x0 = {}
        for f in factors:
            for k in f.keys:
                if k not in x0:
                    x0[k] = self._get(k).copy()
        self.prior = marginalize_factors(factors, drop, {k: key_dim(k) for f in factors for k in f.keys}, x0)

    def _marginalize_keyframe(self, k: int):
        """Eliminate keyframe ``k`` together with the landmarks it observes.

        Those landmarks' observations from other frames are folded into the
        prior, so no visual information is discarded; observations of
        landmarks without an estimate are dropped.
        """
        fr = self.frames[k]
        lms = [l for l in fr.obs if l in self.landmarks and len(self.tracks.get(l, ())) >= 2]
        fids, lids, rv, Jpose, Jl, _ = self.visual_factors(lms)
        extra = [LinearFactor([(POSE, f), (LM, l)], {(POSE, f): Jpose[i], (LM, l): Jl[i]}, rv[i])
                 for i, (f, l) in enumerate(zip(fids, lids))]
        drop = [(POSE, k)] + [(LM, l) for l in lms]
        involved = bool(extra) or (self.prior is not None and (POSE, k) in self.prior.keys)
        if involved:
            self._marginalize_keys(drop, extra)
        for l in lms:
            self._forget_landmark(l)
        self._drop_frame_observations(k)
        del self.frames[k]

    def marginalize(self) -> list[Frame]:
        """Move the window forward: drop surplus drone states and keyframes.

        Returns the frames whose speed/bias/force block left the window,
        in time order, with their final estimates.
        """
        out = []
        while len(self._sb_ids) > self.cfg.n_states:
            d = self._sb_ids[0]
            fr = self.frames[d]
            drop = [(SB, d)]
            if not fr.keyframe:
                self._drop_frame_observations(d)
                drop.append((POSE, d))
            self._marginalize_keys(drop)
            self._sb_ids.pop(0)
            fr.next = None
            if not fr.keyframe:
                del self.frames[d]
            out.append(fr)
        while len(self.keyframe_ids) > self.cfg.n_keyframes:
            k = self.keyframe_ids[0]
            if k in self._sb_ids:
                break
            self._marginalize_keyframe(k)
        self._cleanup_landmarks()
        self.finished.extend(out)
        return out
