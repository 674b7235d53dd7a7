"""From-scratch softmax classifier, local training, label-flip poisoning.

The model is a flattened linear/softmax classifier: weight matrix
(d_in x n_classes) plus bias, d = d_in*n_classes + n_classes parameters.
Local training is seeded mini-batch gradient descent on cross-entropy;
everything is deterministic given (weights, shard, epochs, seed).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

__all__ = [
    "AttackConfig",
    "Shard",
    "LocalModel",
    "model_dim",
    "logits",
    "predict",
    "mean_loss",
    "loss_and_grad",
    "local_train",
    "flip_labels",
    "attack_success_rate",
    "accuracy",
]


@dataclass(frozen=True)
class AttackConfig:
    """Targeted label-flip attack: one malicious client relabels its
    source-class samples and scales its update (model-replacement boost);
    a plain 1/N-weighted flip cannot measurably shift a mean aggregate
    with an honest majority."""

    malicious_id: int = 0
    start_epoch: int = 20
    source_label: int = 2
    target_label: int = 7
    boost_factor: float = 10.0

    def __post_init__(self) -> None:
        if self.source_label == self.target_label:
            raise ValueError("source and target labels must differ")
        if self.boost_factor <= 0:
            raise ValueError("boost_factor must be positive")


class Shard(NamedTuple):
    x: np.ndarray
    y: np.ndarray


@dataclass
class LocalModel:
    """Flat parameter vector plus training hyperparameters."""

    weights: np.ndarray
    d_in: int
    n_classes: int
    lr: float = 0.2
    epochs_trained: int = 0

    @classmethod
    def zeros(cls, d_in: int, n_classes: int, lr: float = 0.2) -> "LocalModel":
        return cls(
            weights=np.zeros(model_dim(d_in, n_classes)),
            d_in=d_in,
            n_classes=n_classes,
            lr=lr,
        )

    def replace_weights(self, weights: np.ndarray) -> "LocalModel":
        return LocalModel(
            weights=weights,
            d_in=self.d_in,
            n_classes=self.n_classes,
            lr=self.lr,
            epochs_trained=self.epochs_trained,
        )


def model_dim(d_in: int, n_classes: int) -> int:
    return d_in * n_classes + n_classes


def _unpack(weights: np.ndarray, d_in: int, n_classes: int):
    w = weights[: d_in * n_classes].reshape(d_in, n_classes)
    b = weights[d_in * n_classes :]
    return w, b


def logits(weights: np.ndarray, x: np.ndarray, d_in: int, n_classes: int) -> np.ndarray:
    w, b = _unpack(weights, d_in, n_classes)
    return x @ w + b


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def predict(weights: np.ndarray, x: np.ndarray, d_in: int, n_classes: int) -> np.ndarray:
    return np.argmax(logits(weights, x, d_in, n_classes), axis=1)


def accuracy(weights: np.ndarray, x: np.ndarray, y: np.ndarray, d_in: int, n_classes: int) -> float:
    return float(np.mean(predict(weights, x, d_in, n_classes) == y))


def mean_loss(weights: np.ndarray, x: np.ndarray, y: np.ndarray, d_in: int, n_classes: int) -> float:
    p = _softmax(logits(weights, x, d_in, n_classes))
    return float(-np.mean(np.log(p[np.arange(len(y)), y] + 1e-12)))


def loss_and_grad(
    weights: np.ndarray, x: np.ndarray, y: np.ndarray, d_in: int, n_classes: int
) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient in the flat parameter vector."""
    n = len(y)
    p = _softmax(logits(weights, x, d_in, n_classes))
    loss = float(-np.mean(np.log(p[np.arange(n), y] + 1e-12)))
    dz = p.copy()
    dz[np.arange(n), y] -= 1.0
    dz /= n
    gw = x.T @ dz
    gb = dz.sum(axis=0)
    return loss, np.concatenate([gw.ravel(), gb])


def local_train(
    model: LocalModel,
    shard: Shard,
    epochs: int,
    seed: int,
    batch_size: int = 32,
) -> np.ndarray:
    """Seeded mini-batch gradient descent; returns (new - old) weights."""
    if shard.x.shape[0] == 0:
        raise ValueError("cannot train on an empty shard")
    w = model.weights.copy()
    if epochs == 0:
        return np.zeros_like(w)
    rng = np.random.default_rng(seed)
    n = shard.x.shape[0]
    for _ in range(epochs):
        order = rng.permutation(n)
        for lo in range(0, n, batch_size):
            idx = order[lo : lo + batch_size]
            _, g = loss_and_grad(w, shard.x[idx], shard.y[idx], model.d_in, model.n_classes)
            w -= model.lr * g
    return w - model.weights


def flip_labels(shard: Shard, attack: AttackConfig) -> Shard:
    """Relabel every source-class sample to the target class."""
    y = np.where(shard.y == attack.source_label, attack.target_label, shard.y)
    return Shard(shard.x, y)


def attack_success_rate(
    weights: np.ndarray,
    x_test: np.ndarray,
    y_test: np.ndarray,
    attack: AttackConfig,
    d_in: int,
    n_classes: int,
) -> float:
    """Fraction of source-class test samples classified as the target."""
    mask = y_test == attack.source_label
    if not np.any(mask):
        raise ValueError("test set contains no source-class samples")
    preds = predict(weights, x_test[mask], d_in, n_classes)
    return float(np.mean(preds == attack.target_label))
