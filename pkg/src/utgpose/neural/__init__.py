"""Small numpy layer engine: forward/backward passes, Adam, binary cross-entropy."""

from .layers import (LSTM, Conv1D, Conv2D, Dense, Dropout, Flatten, InstanceNorm, Layer,
                     LayerSpec, MaxPool, ReLU, Sigmoid, layer_from_spec, lstm_step, sigmoid)
from .network import Network, backward, bce_loss
from .train import AdamState, TrainConfig, TrainResult, accuracy, adam_step, train

__all__ = [
    "LSTM", "Conv1D", "Conv2D", "Dense", "Dropout", "Flatten", "InstanceNorm", "Layer",
    "LayerSpec", "MaxPool", "ReLU", "Sigmoid", "layer_from_spec", "lstm_step", "sigmoid",
    "Network", "backward", "bce_loss", "AdamState", "TrainConfig", "TrainResult",
    "accuracy", "adam_step", "train",
]
