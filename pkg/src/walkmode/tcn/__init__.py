from .network import (
    ShapeError,
    TcnConfig,
    TcnModel,
    backward,
    forward,
    predict,
    predict_sequence,
    predict_window,
    receptive_field,
    softmax_rows,
    window_cross_entropy,
)
from .training import EmptyDatasetError, LabelTrack, TrainReport, evaluate_loss, fit, train

__all__ = [
    "EmptyDatasetError",
    "LabelTrack",
    "ShapeError",
    "TcnConfig",
    "TcnModel",
    "TrainReport",
    "backward",
    "evaluate_loss",
    "fit",
    "forward",
    "predict",
    "predict_sequence",
    "predict_window",
    "receptive_field",
    "softmax_rows",
    "train",
    "window_cross_entropy",
]
