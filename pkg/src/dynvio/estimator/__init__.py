"""Sliding-window visual-inertial-dynamics estimator."""
from .config import MODES, EstimatorConfig, SolverConfig
from .marginal import LinearFactor, MarginalPrior, assemble, marginalize_factors, schur_complement, sqrt_information
from .run import RunResult, gravity_aligned_state, read_trajectory, run_sequence, truth_state, write_outputs
from .visual import bearing_world, max_ray_angle, reprojection, triangulate_midpoint
from .window import CostTerms, Frame, Interval, SlidingWindow

__all__ = [
    "MODES", "EstimatorConfig", "SolverConfig", "LinearFactor", "MarginalPrior", "assemble",
    "marginalize_factors", "schur_complement", "sqrt_information", "RunResult", "gravity_aligned_state",
    "read_trajectory", "run_sequence", "truth_state", "write_outputs", "bearing_world", "max_ray_angle",
    "reprojection", "triangulate_midpoint", "CostTerms", "Frame", "Interval", "SlidingWindow",
]
