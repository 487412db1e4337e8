"""Preintegration of thrust-driven dynamics and IMU data between drone states."""
from .integrate import (REPREINTEGRATION_THRESHOLD, correct_bias_change, force_sensitivity, needs_repreintegration,
                        preintegrate_dynamics, preintegrate_imu, step_quaternion, step_rotation_jacobian)
from .residuals import STATE_BLOCKS, dynamics_residual, imu_residual, information, residual_jacobians, retract
from .types import DroneState, DynamicsNoiseParams, ImuNoiseParams, MeasurementBuffer, PreintegratedDelta

__all__ = [
    "REPREINTEGRATION_THRESHOLD", "correct_bias_change", "force_sensitivity", "needs_repreintegration",
    "preintegrate_dynamics", "preintegrate_imu", "step_quaternion", "step_rotation_jacobian",
    "STATE_BLOCKS", "dynamics_residual", "imu_residual", "information", "residual_jacobians", "retract",
    "DroneState", "DynamicsNoiseParams", "ImuNoiseParams", "MeasurementBuffer", "PreintegratedDelta",
]
