"""Quadrotor flight simulator and synthetic sensor streams."""
from .config import AeroConfig, Camera, SensorNoiseConfig, WindField, WorldConfig, forward_camera_rotation
from .dataset import DatasetError, export_dataset, import_dataset
from .dynamics import (GroundTruth, GroundTruthSample, aero_force_world, aero_specific_force_body,
                       flat_plate_coefficients, simulate)
from .sensors import SensorLog, make_scene, observe, synthesize_sensors
from .trajectory import Reference, generate_trajectory

__all__ = [
    "AeroConfig", "Camera", "SensorNoiseConfig", "WindField", "WorldConfig", "forward_camera_rotation",
    "DatasetError", "export_dataset", "import_dataset", "GroundTruth", "GroundTruthSample",
    "aero_force_world", "aero_specific_force_body", "flat_plate_coefficients", "simulate",
    "SensorLog", "make_scene", "observe", "synthesize_sensors", "Reference", "generate_trajectory",
]
