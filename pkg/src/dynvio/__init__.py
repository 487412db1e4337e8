"""Visual-inertial odometry with a hybrid (point-mass + learned residual) drone dynamics model."""

__version__ = "0.1.0"
