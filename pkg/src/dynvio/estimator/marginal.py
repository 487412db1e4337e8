"""Gaussian marginalization by Schur complement and the resulting linear prior."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np


@dataclass
class LinearFactor:
    """Whitened linear(ized) residual ``r + sum_k J[k] dx_k`` over named variable blocks."""

    keys: list
    J: dict
    r: np.ndarray


def assemble(factors: list[LinearFactor], order: list, dims: dict):
    """Information matrix ``H = J^T J`` and vector ``b = J^T r`` over ``order``."""
    offs = {}
    n = 0
    for k in order:
        offs[k] = n
        n += dims[k]
    H = np.zeros((n, n))
    b = np.zeros(n)
    for f in factors:
        for ki in f.keys:
            i = offs[ki]
            Ji = f.J[ki]
            b[i:i + dims[ki]] += Ji.T @ f.r
            for kj in f.keys:
                j = offs[kj]
                H[i:i + dims[ki], j:j + dims[kj]] += Ji.T @ f.J[kj]
    return H, b, offs


def _psd_inverse(H: np.ndarray, rtol: float = 1e-12) -> np.ndarray:
    w, V = np.linalg.eigh(0.5 * (H + H.T))
    keep = w > rtol * max(w.max(initial=0.0), 1e-300)
    inv = np.zeros_like(w)
    inv[keep] = 1.0 / w[keep]
    return (V * inv) @ V.T


def schur_complement(H: np.ndarray, b: np.ndarray, drop: np.ndarray):
    """Eliminate index set ``drop``; returns ``(H_s, b_s)`` on the remaining indices."""
    drop = np.asarray(drop, dtype=int)
    keep = np.setdiff1d(np.arange(len(b)), drop)
    Hmm = H[np.ix_(drop, drop)]
    Hkm = H[np.ix_(keep, drop)]
    inv = _psd_inverse(Hmm)
    Hs = H[np.ix_(keep, keep)] - Hkm @ inv @ Hkm.T
    bs = b[keep] - Hkm @ inv @ b[drop]
    return 0.5 * (Hs + Hs.T), bs


def sqrt_information(H: np.ndarray, b: np.ndarray, rtol: float = 1e-12):
    """Factor ``H = J^T J`` and ``b = J^T r`` via an eigendecomposition.

    Negative eigenvalues from round-off are clipped to zero; clearly
    negative ones trigger a warning.
    """
    w, V = np.linalg.eigh(0.5 * (H + H.T))
    scale = max(np.abs(w).max(initial=0.0), 1e-300)
    if w.min(initial=0.0) < -1e-8 * scale:
        warnings.warn("marginal information has negative eigenvalues, projecting to PSD", RuntimeWarning)
    keep = w > rtol * scale
    s = np.sqrt(w[keep])
    J = s[:, None] * V[:, keep].T
    r = (V[:, keep].T @ b) / s
    return J, r


@dataclass
class MarginalPrior:
    """Linear prior ``|r0 + J (x - x0)|^2`` on a set of variable blocks.

    ``x0`` holds the linearization point of every block; the difference
    ``x - x0`` is taken in the blocks' tangent spaces by the owner.
    """

    keys: list
    dims: dict
    J: np.ndarray
    r0: np.ndarray
    x0: dict

    @property
    def H(self) -> np.ndarray:
        return self.J.T @ self.J

    @property
    def size(self) -> int:
        return sum(self.dims[k] for k in self.keys)

    def offsets(self) -> dict:
        out, n = {}, 0
        for k in self.keys:
            out[k] = n
            n += self.dims[k]
        return out


def marginalize_factors(factors: list[LinearFactor], drop_keys: list, dims: dict, x0: dict) -> MarginalPrior | None:
    """Marginalize ``drop_keys`` out of the Gaussian defined by ``factors``.

    The remaining blocks touched by the factors become the prior's keys,
    linearized at ``x0``. Returns ``None`` when nothing remains.
    """
    order = []
    for f in factors:
        for k in f.keys:
            if k not in order:
                order.append(k)
    for k in drop_keys:
        if k not in order:
            order.append(k)
    H, b, offs = assemble(factors, order, dims)
    drop = np.concatenate([np.arange(offs[k], offs[k] + dims[k]) for k in drop_keys]) if drop_keys else np.zeros(0, int)
    keep_keys = [k for k in order if k not in drop_keys]
    if not keep_keys:
        return None
    Hs, bs = schur_complement(H, b, drop)
    J, r = sqrt_information(Hs, bs)
    return MarginalPrior(keep_keys, {k: dims[k] for k in keep_keys}, J, r, {k: x0[k] for k in keep_keys})
