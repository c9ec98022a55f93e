from .adam import Adam
from .layers import BatchNorm1d, Conv1d, Linear, MaxPool1d, ReLU, softmax, softmax_xent
from .star import StarConfig, StarNetwork, predict_labels

__all__ = [
    "Adam",
    "BatchNorm1d",
    "Conv1d",
    "Linear",
    "MaxPool1d",
    "ReLU",
    "softmax",
    "softmax_xent",
    "StarConfig",
    "StarNetwork",
    "predict_labels",
]
