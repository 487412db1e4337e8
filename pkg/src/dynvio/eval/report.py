"""Per-run metrics, cross-mode comparison tables and plot-ready CSVs."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .metrics import align_posyaw, ate_rotation, ate_translation, force_rmse, relative_errors

METRIC_COLUMNS = ("ate_t", "ate_r", "force_rmse", "force_rmse_z", "force_norm_rmse", "rel_trans_percent")


def evaluate_run(res, truth, mass: float = 1.0) -> dict:
    """ATE, relative error and external-force metrics of one estimator run."""
    pair = align_posyaw(res.t, res.p, res.q, truth.t, truth.p, truth.q)
    rel = relative_errors(pair)
    f = force_rmse(res.t, res.f_e, truth.t, truth.q, truth.f_e, mass)
    return {"ate_t": ate_translation(pair), "ate_r": ate_rotation(pair), "force_rmse": f["rmse"],
            "force_rmse_z": f["rmse_z"], "force_rmse_N": f["rmse_N"], "force_norm_rmse": f["norm_rmse"],
            "rel_trans_percent": float(np.nanmean([r["trans_percent"] for r in rel])),
            "relative": rel, "force": f}


@dataclass
class Report:
    """Comparison of several modes on several datasets."""

    datasets: list
    modes: list
    metrics: dict  # (dataset, mode) -> metric dict
    ranks: dict = field(default_factory=dict)  # (dataset, column) -> ordered modes

    def rows(self) -> list[dict]:
        out = []
        for d in self.datasets:
            for m in self.modes:
                row = {"dataset": d, "mode": m}
                row.update({c: self.metrics[(d, m)][c] for c in METRIC_COLUMNS})
                out.append(row)
        return out

    def markdown(self) -> str:
        lines = ["# Estimator comparison", "",
                 "Bold marks the best value per dataset and column, italics the second best.", ""]
        head = ["dataset", "mode", "ATE_T [m]", "ATE_R [deg]", "f_e RMSE [m/s^2]", "f_e RMSE z",
                "f_e norm RMSE", "rel. trans. [%]"]
        lines.append("| " + " | ".join(head) + " |")
        lines.append("|" + "---|" * len(head))
        for d in self.datasets:
            for m in self.modes:
                cells = [d, m]
                for c in METRIC_COLUMNS:
                    v = self.metrics[(d, m)][c]
                    s = f"{v:.4f}"
                    order = self.ranks.get((d, c), [])
                    if order and order[0] == m:
                        s = f"**{s}**"
                    elif len(order) > 1 and order[1] == m:
                        s = f"*{s}*"
                    cells.append(s)
                lines.append("| " + " | ".join(cells) + " |")
        return "\n".join(lines) + "\n"


def rank_modes(values: dict) -> list:
    """Modes ordered by ascending metric value (ties keep insertion order)."""
    return sorted(values, key=lambda m: (np.nan_to_num(values[m], nan=np.inf)))


def compare_modes(runs: dict, truths: dict, out_dir=None, mass: float = 1.0) -> Report:
    """Evaluate ``runs[dataset][mode]`` against ``truths[dataset]``.

    Writes ``report.md``, ``metrics.csv`` and per-dataset force/bias CSVs
    when ``out_dir`` is given.
    """
    if set(runs) != set(truths):
        raise ValueError(f"dataset lists differ: runs {sorted(runs)} vs truths {sorted(truths)}")
    datasets = list(runs)
    if not datasets:
        raise ValueError("nothing to compare")
    modes = list(runs[datasets[0]])
    for d in datasets:
        if list(runs[d]) != modes:
            raise ValueError(f"dataset {d!r} has modes {list(runs[d])}, expected {modes}")
    metrics = {(d, m): evaluate_run(runs[d][m], truths[d], mass) for d in datasets for m in modes}
    ranks = {(d, c): rank_modes({m: metrics[(d, m)][c] for m in modes}) for d in datasets for c in METRIC_COLUMNS}
    rep = Report(datasets, modes, metrics, ranks)
    if out_dir is not None:
        write_report(rep, runs, truths, out_dir)
    return rep


def write_report(rep: Report, runs: dict, truths: dict, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.md").write_text(rep.markdown())
    with open(out / "metrics.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["dataset", "mode", *METRIC_COLUMNS])
        w.writeheader()
        for row in rep.rows():
            w.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in row.items()})
    for d in rep.datasets:
        write_force_csv(out / f"force_{d}.csv", runs[d], truths[d])
        write_bias_csv(out / f"bias_{d}.csv", runs[d])
    return out


def write_force_csv(path, runs_by_mode: dict, truth) -> None:
    """World-frame force time series: truth and each mode, on the common timestamps."""
    modes = list(runs_by_mode)
    ref = runs_by_mode[modes[0]]
    f0 = force_rmse(ref.t, ref.f_e, truth.t, truth.q, truth.f_e)
    t = f0["t"]
    cols = [t, f0["world_true"]]
    head = ["t", "true_x", "true_y", "true_z"]
    for m in modes:
        r = runs_by_mode[m]
        f = force_rmse(r.t, r.f_e, truth.t, truth.q, truth.f_e)
        if len(f["t"]) != len(t) or np.any(f["t"] != t):
            raise ValueError("modes report forces on different timestamps")
        cols.append(f["world_est"])
        head += [f"{m}_x", f"{m}_y", f"{m}_z"]
    _write(path, head, np.column_stack(cols))


def write_bias_csv(path, runs_by_mode: dict) -> None:
    modes = list(runs_by_mode)
    t = runs_by_mode[modes[0]].t
    cols, head = [t], ["t"]
    for m in modes:
        r = runs_by_mode[m]
        if len(r.t) != len(t):
            raise ValueError("modes report biases on different timestamps")
        cols += [r.b_a, r.b_w]
        head += [f"{m}_ba_x", f"{m}_ba_y", f"{m}_ba_z", f"{m}_bw_x", f"{m}_bw_y", f"{m}_bw_z"]
    _write(path, head, np.column_stack(cols))


def _write(path, head, data):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(head)
        for row in data:
            w.writerow([repr(float(x)) for x in row])
