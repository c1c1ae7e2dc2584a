"""Adam and the mini-batch training loop."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import TextIO

import numpy as np

from ..errors import DivergedError
from .network import Network

log = logging.getLogger(__name__)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros_like(cls, param: np.ndarray) -> "AdamState":
        return cls(np.zeros_like(param), np.zeros_like(param), 0)


def adam_step(param: np.ndarray, grad: np.ndarray, state: AdamState, lr: float = 1e-3,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8
              ) -> tuple[np.ndarray, AdamState]:
    """Bias-corrected Adam update; returns new arrays and leaves the inputs untouched."""
    step = state.step + 1
    m = beta1 * state.m + (1 - beta1) * grad
    v = beta2 * state.v + (1 - beta2) * grad * grad
    m_hat = m / (1 - beta1**step)
    v_hat = v / (1 - beta2**step)
    new = param - lr * m_hat / (np.sqrt(v_hat) + eps)
    return new.astype(param.dtype, copy=False), AdamState(m, v, step)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 50
    max_epochs: int = 20
    seed: int = 0
    # stop once an epoch's mean loss falls below this; None trains for max_epochs
    stop_loss: float | None = None

    def __post_init__(self) -> None:
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be >= 1")


@dataclass
class TrainResult:
    loss_curve: list[float] = field(default_factory=list)

    def write_csv(self, fh: TextIO) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "mean_loss"])
        for i, loss in enumerate(self.loss_curve, start=1):
            w.writerow([i, f"{loss:.8g}"])


def train(network: Network, x: np.ndarray, y: np.ndarray, config: TrainConfig = TrainConfig()
          ) -> TrainResult:
    """Shuffled mini-batch Adam on mean BCE. Updates ``network`` in place.

    Epoch loss is the sample-weighted mean of the batch losses, so a smaller
    trailing batch counts in proportion to its size.
    """
    x = np.asarray(x, dtype=network.dtype)
    y = np.asarray(y, dtype=network.dtype).reshape(-1)
    if len(x) == 0:
        raise ValueError("empty training set")
    if len(x) != len(y):
        raise ValueError("x and y lengths differ")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")

    rng = np.random.default_rng(config.seed)
    states = {name: AdamState.zeros_like(p) for name, p in network.named_params()}
    result = TrainResult()
    n = len(x)
    for epoch in range(config.max_epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            network.zero_grad()
            loss = network.loss_and_grad(x[idx], y[idx], training=True, rng=rng)
            if not np.isfinite(loss):
                raise DivergedError(f"loss became {loss} in epoch {epoch + 1}")
            total += loss * len(idx)
            for layer_i, layer in enumerate(network.layers):
                for name in layer.params:
                    key = f"{layer_i}.{layer.kind}.{name}"
                    layer.params[name], states[key] = adam_step(
                        layer.params[name], layer.grads[name], states[key],
                        config.lr, config.beta1, config.beta2, config.eps)
        mean = total / n
        result.loss_curve.append(mean)
        log.info("epoch %d/%d loss %.5f", epoch + 1, config.max_epochs, mean)
        if config.stop_loss is not None and mean < config.stop_loss:
            break
    return result


def accuracy(network: Network, x: np.ndarray, y: np.ndarray) -> float:
    p = network.predict(x)
    return float(((p >= 0.5) == (np.asarray(y).reshape(-1) == 1)).mean())
