"""Seeded SGD trainer for small Dense/ReLU classifiers (test fixtures)."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .errors import DataFormatError, ShapeError, TrainingDiverged
from .model import Dense, Flatten, Model, ReLU
from .prng import Xoshiro256


@dataclass
class TrainResult:
    model: Model
    accuracy: float
    # mean cross-entropy over the training set; index 0 is the initialization
    losses: list[float] = field(default_factory=list)


def init_mlp(input_shape, widths: list[int], class_names: list[str], seed: int) -> Model:
    """Glorot-uniform weights from a seeded xoshiro256** stream, zero biases."""
    if len(widths) < 2:
        raise ShapeError("architecture needs at least input and output widths")
    layers = []
    if len(input_shape) != 1:
        layers.append(Flatten())
    if int(np.prod(input_shape)) != widths[0]:
        raise ShapeError(f"architecture input width {widths[0]} != input size {int(np.prod(input_shape))}")
    for i, (n_in, n_out) in enumerate(zip(widths[:-1], widths[1:])):
        rng = Xoshiro256.substream(seed, "init", i)
        a = math.sqrt(6.0 / (n_in + n_out))
        layers.append(Dense(rng.uniform(-a, a, n_in * n_out).reshape(n_in, n_out), np.zeros(n_out)))
        if i < len(widths) - 2:
            layers.append(ReLU())
    return Model(tuple(input_shape), layers, class_names)


def _log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - np.max(z)
    return shifted - math.log(float(np.sum(np.exp(shifted))))


def _forward(dense: list[Dense], x: np.ndarray) -> list[np.ndarray]:
    acts = [x]
    for i, layer in enumerate(dense):
        z = nx.dense_forward(acts[-1], layer.weights, layer.bias)
        acts.append(z if i == len(dense) - 1 else np.where(z > 0, z, 0.0))
    return acts


def _mean_loss(dense, xs, ys) -> tuple[float, float]:
    total, correct = [], 0
    for x, y in zip(xs, ys):
        logits = _forward(dense, x)[-1]
        total.append(-_log_softmax(logits)[y])
        correct += int(np.argmax(logits)) == y
    return math.fsum(total) / len(xs), correct / len(xs)


def train_mlp(
    dataset,
    architecture: list[int],
    epochs: int,
    learning_rate: float,
    seed: int,
) -> TrainResult:
    """Per-sample SGD on softmax cross-entropy.

    ``architecture`` lists layer widths, e.g. ``[2, 8, 2]`` builds
    Dense(2->8), ReLU, Dense(8->2). Samples are reshuffled every epoch from a
    stream keyed by ``(seed, epoch)``, so runs are bit-identical per seed.
    """
    if len(dataset.inputs) == 0:
        raise DataFormatError("cannot train on an empty dataset")
    if dataset.labels is None:
        raise DataFormatError("training needs labels")
    if architecture[-1] != len(dataset.class_names):
        raise ShapeError(
            f"output width {architecture[-1]} != {len(dataset.class_names)} classes"
        )
    model = init_mlp(dataset.input_shape, list(architecture), dataset.class_names, seed)
    dense = [layer for layer in model.layers if isinstance(layer, Dense)]
    xs = [np.asarray(x, dtype=np.float64).reshape(-1) for x in dataset.inputs]
    ys = list(dataset.labels)

    loss, acc = _mean_loss(dense, xs, ys)
    losses = [loss]
    for epoch in range(1, epochs + 1):
        order = Xoshiro256.substream(seed, "shuffle", epoch).permutation(len(xs))
        for idx in order:
            acts = _forward(dense, xs[idx])
            logp = _log_softmax(acts[-1])
            if not math.isfinite(-logp[ys[idx]]):
                raise TrainingDiverged(epoch, float(-logp[ys[idx]]))
            delta = np.exp(logp)
            delta[ys[idx]] -= 1.0
            for li in range(len(dense) - 1, -1, -1):
                layer = dense[li]
                a_in = acts[li]
                back = nx.linear_sum_transpose(delta, layer.weights) if li else None
                layer.weights -= learning_rate * np.outer(a_in, delta)
                layer.bias -= learning_rate * delta
                if li:
                    delta = np.where(acts[li] > 0, back, 0.0)
        loss, acc = _mean_loss(dense, xs, ys)
        if not math.isfinite(loss):
            raise TrainingDiverged(epoch, loss)
        losses.append(loss)
    return TrainResult(model, acc, losses)
