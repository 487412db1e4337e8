"""Trajectory and force metrics and cross-mode reports."""
from .metrics import (ASSOC_TOL, DISTANCE_BINS, AlignedPair, align_posyaw, associate, ate_rotation, ate_translation,
                      force_rmse, posyaw_transform, relative_errors, rotation_angles_deg, scaled_bins)
from .report import METRIC_COLUMNS, Report, compare_modes, evaluate_run, rank_modes, write_report

__all__ = [
    "ASSOC_TOL", "DISTANCE_BINS", "AlignedPair", "align_posyaw", "associate", "ate_rotation", "ate_translation",
    "force_rmse", "posyaw_transform", "relative_errors", "rotation_angles_deg", "scaled_bins",
    "METRIC_COLUMNS", "Report", "compare_modes", "evaluate_run", "rank_modes", "write_report",
]
