"""The detection model: video encoder, event localizer, multi-label
classifier and contextual refiner, with teacher-forced training and
sliding-window inference."""

from .model import F3EDConfig, F3EDModel
from .train import TrainResult, load_checkpoint, prepare_windows, save_checkpoint, train
from .infer import constrained_decode, infer_clip, infer_dataset, peak_pick

__all__ = [
    "F3EDConfig",
    "F3EDModel",
    "TrainResult",
    "constrained_decode",
    "infer_clip",
    "infer_dataset",
    "load_checkpoint",
    "peak_pick",
    "prepare_windows",
    "save_checkpoint",
    "train",
]
