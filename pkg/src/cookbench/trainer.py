"""SGD-with-momentum training and batched prediction."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Dataset
from .errors import NumericError, ParameterError, ShapeError
from .nn import ModelParams, ModelSpec, forward, loss_grads_logits, softmax
from .tensor import Rng

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 128
    lr: float = 1e-3
    momentum: float = 0.9
    shuffle_seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ParameterError("epochs and batch_size must be positive")
        if self.lr <= 0:
            raise ParameterError("lr must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ParameterError("momentum must lie in [0, 1)")


@dataclass
class TrainHistory:
    loss: list[float] = field(default_factory=list)
    acc: list[float] = field(default_factory=list)
    batch_loss: list[float] = field(default_factory=list)

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "loss", "acc"])
            for e, (l, a) in enumerate(zip(self.loss, self.acc), start=1):
                w.writerow([e, repr(l), repr(a)])


def sgd_momentum_step(param: np.ndarray, velocity: np.ndarray, grad: np.ndarray, lr: float, momentum: float) -> None:
    """In place: ``v = momentum * v + g``; ``param -= lr * v``."""
    velocity *= momentum
    velocity += grad
    param -= lr * velocity


def train(
    spec: ModelSpec,
    init: ModelParams,
    dataset: Dataset,
    cfg: TrainConfig,
) -> tuple[ModelParams, TrainHistory]:
    """Minimise mean-batch cross-entropy with SGD + momentum.

    Batches follow a fresh permutation each epoch drawn from
    ``cfg.shuffle_seed``; the last batch may be short. The returned
    history holds per-epoch mean loss and accuracy, measured on each batch
    before its update.

    Raises:
        NumericError: if the loss becomes non-finite (message names the epoch).
    """
    if len(dataset) == 0:
        raise ParameterError("cannot train on an empty dataset")
    if dataset.sample_shape != spec.input_shape:
        raise ShapeError(f"dataset samples {dataset.sample_shape} do not match model input {spec.input_shape}")
    params = init.copy()
    velocity = [{k: np.zeros_like(v) for k, v in d.items()} for d in params.tensors]
    rng = Rng(cfg.shuffle_seed)
    history = TrainHistory()
    n = len(dataset)
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        total_loss = 0.0
        correct = 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            xb, yb = dataset.images[idx], dataset.labels[idx]
            loss, grads, logits = loss_grads_logits(spec, params, xb, yb)
            if not np.isfinite(loss):
                raise NumericError(f"non-finite training loss in epoch {epoch}")
            history.batch_loss.append(loss)
            total_loss += loss * len(idx)
            # Accuracy is read off the same forward pass the gradient used.
            correct += int(np.sum(np.argmax(logits, axis=1) == yb))
            for p, v, g in zip(params.tensors, velocity, grads.tensors):
                for name in p:
                    sgd_momentum_step(p[name], v[name], g[name], cfg.lr, cfg.momentum)
        history.loss.append(total_loss / n)
        history.acc.append(correct / n)
        log.debug("epoch %d loss %.4f acc %.4f", epoch, history.loss[-1], history.acc[-1])
    return params, history


def predict(spec: ModelSpec, params: ModelParams, dataset) -> tuple[np.ndarray, np.ndarray]:
    """Argmax labels (lowest index on ties) and softmax rows."""
    images = np.asarray(getattr(dataset, "images", dataset), dtype=np.float64)
    if images.shape[1:] != spec.input_shape:
        raise ShapeError(f"samples {images.shape[1:]} do not match model input {spec.input_shape}")
    logits = np.concatenate([forward(spec, params, images[i : i + 1024]) for i in range(0, len(images), 1024)])
    return np.argmax(logits, axis=1), softmax(logits)
