"""Residual-force models: zero, linear drag and a temporal convolutional network."""
from __future__ import annotations

import numpy as np
import torch
from torch import nn

from .windows import N_CHANNELS, WINDOW_LEN, InputWindow

TCN_CHANNELS = (64, 64, 64, 64, 128, 128, 128)
TCN_DILATIONS = (1, 1, 2, 2, 1, 2, 4)
TCN_KERNEL = 3


def _as_batch(windows) -> np.ndarray:
    if isinstance(windows, InputWindow):
        return windows.data[None]
    w = np.asarray(windows, dtype=float)
    if w.ndim == 2:
        w = w[None]
    if w.ndim != 3 or w.shape[1:] != (N_CHANNELS, WINDOW_LEN):
        raise ValueError(f"window batch shape {w.shape}, expected (M, {N_CHANNELS}, {WINDOW_LEN})")
    return w


class ResidualForceModel:
    """Maps a thrust + gyro window to a body-frame residual force (m/s^2)."""

    variant = "base"
    uses_proxy = False

    def forward(self, window, proxy=None) -> np.ndarray:
        return self.forward_batch(_as_batch(window), None if proxy is None else np.atleast_2d(proxy))[0]

    def forward_batch(self, windows, proxies=None) -> np.ndarray:
        raise NotImplementedError

    def get_params(self) -> np.ndarray:
        return np.zeros(0)

    def set_params(self, vec) -> None:
        if len(vec):
            raise ValueError("model has no parameters")

    def descriptor(self) -> dict:
        return {}

    def state(self) -> dict:
        """Named float64 arrays that fully determine the model."""
        return {}


class ZeroModel(ResidualForceModel):
    variant = "zero"

    def forward_batch(self, windows, proxies=None) -> np.ndarray:
        return np.zeros((len(_as_batch(windows)), 3))


class LinearDragModel(ResidualForceModel):
    """``f_res = -D u`` with ``u`` a body-frame velocity proxy supplied by the caller.

    Diagnostic variant: the proxy may be the true body velocity (training
    oracle) or the estimator's current velocity; without a proxy it falls
    back to the window's mean bias-removed gyro, which carries little
    information.
    """

    variant = "linear-drag"
    uses_proxy = True

    def __init__(self, D=None):
        self.D = np.zeros((3, 3)) if D is None else np.asarray(D, dtype=float).reshape(3, 3).copy()

    def _proxies(self, windows, proxies):
        if proxies is None:
            return windows[:, 1:, :].mean(axis=2)
        p = np.asarray(proxies, dtype=float).reshape(-1, 3)
        if len(p) != len(windows):
            raise ValueError("one proxy per window required")
        return p

    def forward_batch(self, windows, proxies=None) -> np.ndarray:
        w = _as_batch(windows)
        return -self._proxies(w, proxies) @ self.D.T

    def get_params(self) -> np.ndarray:
        return self.D.ravel().copy()

    def set_params(self, vec) -> None:
        self.D = np.asarray(vec, dtype=float).reshape(3, 3).copy()

    def state(self) -> dict:
        return {"D": self.D}


class _CausalConv(nn.Module):
    def __init__(self, c_in, c_out, kernel, dilation):
        super().__init__()
        self.pad = (kernel - 1) * dilation
        self.conv = nn.Conv1d(c_in, c_out, kernel, dilation=dilation, dtype=torch.float64)

    def forward(self, x):
        return self.conv(nn.functional.pad(x, (self.pad, 0)))


class _TCN(nn.Module):
    def __init__(self, channels, dilations, kernel):
        super().__init__()
        layers = []
        c_in = N_CHANNELS
        for c, d in zip(channels, dilations):
            layers.append(_CausalConv(c_in, c, kernel, d))
            c_in = c
        self.convs = nn.ModuleList(layers)
        self.act = nn.GELU()
        self.head = nn.Linear(c_in, 3, dtype=torch.float64)

    def forward(self, x):
        for conv in self.convs:
            x = self.act(conv(x))
        return self.head(x[:, :, -1])


class TCNModel(ResidualForceModel):
    """Causal dilated 1-D convolutions over the window, read out at the last step."""

    variant = "tcn"

    def __init__(self, seed: int = 0, channels=TCN_CHANNELS, dilations=TCN_DILATIONS, kernel: int = TCN_KERNEL,
                 mean=None, std=None):
        if len(channels) != len(dilations):
            raise ValueError("one dilation per layer required")
        self.channels = tuple(int(c) for c in channels)
        self.dilations = tuple(int(d) for d in dilations)
        self.kernel = int(kernel)
        self.seed = int(seed)
        self.net = _TCN(self.channels, self.dilations, self.kernel)
        self.mean = np.zeros(N_CHANNELS) if mean is None else np.asarray(mean, dtype=float).copy()
        self.std = np.ones(N_CHANNELS) if std is None else np.asarray(std, dtype=float).copy()
        self._init_weights(np.random.default_rng(seed))

    @property
    def receptive_field(self) -> int:
        return 1 + (self.kernel - 1) * sum(self.dilations)

    def _init_weights(self, rng):
        # numpy draws keep initialization identical across torch versions
        with torch.no_grad():
            for p in self.net.parameters():
                fan_in = p.shape[1] * (p.shape[2] if p.ndim == 3 else 1) if p.ndim > 1 else None
                if fan_in is None:
                    continue
                bound = 1.0 / np.sqrt(fan_in)
                p.copy_(torch.from_numpy(rng.uniform(-bound, bound, size=tuple(p.shape))))
            for m in self.net.modules():
                if isinstance(m, (nn.Conv1d, nn.Linear)):
                    m.bias.zero_()

    def normalize(self, windows: np.ndarray) -> torch.Tensor:
        return torch.from_numpy((windows - self.mean[None, :, None]) / self.std[None, :, None])

    def forward_tensor(self, windows: np.ndarray) -> torch.Tensor:
        return self.net(self.normalize(_as_batch(windows)))

    def forward_batch(self, windows, proxies=None) -> np.ndarray:
        with torch.no_grad():
            return self.forward_tensor(windows).numpy().copy()

    def parameters(self):
        return list(self.net.parameters())

    def get_params(self) -> np.ndarray:
        return np.concatenate([p.detach().numpy().ravel() for p in self.net.parameters()])

    def set_params(self, vec) -> None:
        vec = np.asarray(vec, dtype=float)
        k = 0
        with torch.no_grad():
            for p in self.net.parameters():
                n = p.numel()
                p.copy_(torch.from_numpy(vec[k:k + n].reshape(tuple(p.shape))))
                k += n
        if k != len(vec):
            raise ValueError(f"parameter vector has {len(vec)} entries, model has {k}")

    def descriptor(self) -> dict:
        return {"channels": list(self.channels), "dilations": list(self.dilations), "kernel": self.kernel,
                "activation": "gelu", "padding": "causal", "readout": "last-step linear",
                "input": [N_CHANNELS, WINDOW_LEN], "init_seed": self.seed}

    def state(self) -> dict:
        out = {"mean": self.mean, "std": self.std}
        for name, p in self.net.named_parameters():
            out[name] = p.detach().numpy()
        return out

    def load_state(self, arrays: dict) -> None:
        self.mean = np.asarray(arrays["mean"], dtype=float).copy()
        self.std = np.asarray(arrays["std"], dtype=float).copy()
        with torch.no_grad():
            for name, p in self.net.named_parameters():
                p.copy_(torch.from_numpy(np.asarray(arrays[name], dtype=float).reshape(tuple(p.shape))))


VARIANTS = {"zero": ZeroModel, "linear-drag": LinearDragModel, "tcn": TCNModel}


def make_model(variant: str, **kw) -> ResidualForceModel:
    try:
        return VARIANTS[variant](**kw)
    except KeyError:
        raise ValueError(f"unknown model variant {variant!r}") from None
