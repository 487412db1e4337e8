"""Versioned JSON container for residual-force models."""
from __future__ import annotations

import base64
import hashlib
import json
from pathlib import Path

import numpy as np

from .models import LinearDragModel, ResidualForceModel, TCNModel, ZeroModel

FORMAT = "dynvio-resmodel"
VERSION = 1


class ModelFileError(ValueError):
    pass


def _encode(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a, dtype="<f8")
    return {"shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def _decode(d: dict) -> np.ndarray:
    return np.frombuffer(base64.b64decode(d["data"]), dtype="<f8").reshape(d["shape"]).copy()


def _checksum(payload: dict) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def save_model(model: ResidualForceModel, path, train_seed: int | None = None, config_hash: str | None = None) -> Path:
    payload = {
        "format": FORMAT,
        "version": VERSION,
        "variant": model.variant,
        "architecture": model.descriptor(),
        "arrays": {k: _encode(v) for k, v in model.state().items()},
        "train_seed": train_seed,
        "config_hash": config_hash,
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps({"payload": payload, "sha256": _checksum(payload)}, indent=1, sort_keys=True))
    return path


def read_model_file(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
        payload, digest = doc["payload"], doc["sha256"]
    except (OSError, ValueError, KeyError, TypeError) as e:
        raise ModelFileError(f"unreadable model file {path}: {e}") from e
    if _checksum(payload) != digest:
        raise ModelFileError(f"checksum failure in {path}")
    if payload.get("format") != FORMAT:
        raise ModelFileError(f"{path} is not a residual-model file")
    if payload.get("version") != VERSION:
        raise ModelFileError(f"model file version {payload.get('version')} != supported {VERSION}")
    return payload


def load_model(path, variant: str | None = None) -> ResidualForceModel:
    """Load a model; ``variant`` (if given) must match the stored one."""
    payload = read_model_file(path)
    stored = payload["variant"]
    if variant is not None and variant != stored:
        raise ModelFileError(f"variant mismatch: requested {variant!r}, file holds {stored!r}")
    arrays = {k: _decode(v) for k, v in payload["arrays"].items()}
    if stored == "zero":
        return ZeroModel()
    if stored == "linear-drag":
        return LinearDragModel(arrays["D"])
    if stored == "tcn":
        a = payload["architecture"]
        m = TCNModel(seed=a.get("init_seed", 0), channels=a["channels"], dilations=a["dilations"], kernel=a["kernel"])
        m.load_state(arrays)
        return m
    raise ModelFileError(f"unknown variant {stored!r}")
