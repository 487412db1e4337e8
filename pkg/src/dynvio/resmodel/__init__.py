"""Learned residual force: thrust + gyro window -> body-frame force correction."""
from .io import ModelFileError, load_model, read_model_file, save_model
from .models import (TCN_CHANNELS, TCN_DILATIONS, TCN_KERNEL, LinearDragModel, ResidualForceModel, TCNModel,
                     ZeroModel, make_model)
from .training import (TrainConfig, TrainingSample, TrainResult, batch_loss, loss_and_gradient,
                       predict_total_force, samples_from_log, supervision_deltas, train)
from .windows import WINDOW_LEN, InputWindow, buffer_windows, sliding_windows, window_segments

__all__ = [
    "ModelFileError", "load_model", "read_model_file", "save_model",
    "TCN_CHANNELS", "TCN_DILATIONS", "TCN_KERNEL", "LinearDragModel", "ResidualForceModel", "TCNModel",
    "ZeroModel", "make_model",
    "TrainConfig", "TrainingSample", "TrainResult", "batch_loss", "loss_and_gradient", "predict_total_force",
    "samples_from_log", "supervision_deltas", "train",
    "WINDOW_LEN", "InputWindow", "buffer_windows", "sliding_windows", "window_segments",
]
