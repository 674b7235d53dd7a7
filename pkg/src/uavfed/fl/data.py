"""Datasets: synthetic Gaussian class blobs and IDX-format loading."""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Dataset",
    "IdxFormatError",
    "IdxMagicError",
    "IdxCountMismatchError",
    "IdxTruncatedError",
    "generate_synthetic",
    "load_idx",
    "merge_idx",
]

_IDX_IMAGES_MAGIC = 0x00000803
_IDX_LABELS_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    pass


class IdxMagicError(IdxFormatError):
    pass


class IdxCountMismatchError(IdxFormatError):
    pass


class IdxTruncatedError(IdxFormatError):
    pass


@dataclass(frozen=True)
class Dataset:
    """Feature matrices with integer labels and a disjoint train/test split."""

    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    n_classes: int
    source: str = "synthetic"

    def __post_init__(self) -> None:
        for y in (self.y_train, self.y_test):
            if y.size and (y.min() < 0 or y.max() >= self.n_classes):
                raise ValueError("labels out of range")
        if self.x_train.shape[0] != self.y_train.shape[0]:
            raise ValueError("train feature/label count mismatch")
        if self.x_test.shape[0] != self.y_test.shape[0]:
            raise ValueError("test feature/label count mismatch")

    @property
    def d_in(self) -> int:
        return int(self.x_train.shape[1])


def generate_synthetic(
    seed: int,
    n_classes: int = 10,
    d_in: int = 16,
    n_train_per_class: int = 200,
    n_test_per_class: int = 100,
    separation: float = 3.0,
) -> Dataset:
    """Gaussian blobs with unit covariance around simplex-vertex means.

    Class c is centered at separation * e_c (requires d_in >= n_classes),
    so all pairs of classes are equidistant. Deterministic per seed.
    """
    if n_train_per_class <= 0 or n_test_per_class <= 0:
        raise ValueError("per-class sample counts must be positive")
    if d_in < n_classes:
        raise ValueError("d_in must be at least n_classes for simplex means")
    rng = np.random.default_rng(seed)
    means = np.zeros((n_classes, d_in))
    means[np.arange(n_classes), np.arange(n_classes)] = separation

    def draw(n_per_class: int) -> tuple[np.ndarray, np.ndarray]:
        xs, ys = [], []
        for c in range(n_classes):
            xs.append(rng.normal(0.0, 1.0, (n_per_class, d_in)) + means[c])
            ys.append(np.full(n_per_class, c, dtype=np.int64))
        x = np.vstack(xs)
        y = np.concatenate(ys)
        order = rng.permutation(len(y))
        return x[order], y[order]

    x_tr, y_tr = draw(n_train_per_class)
    x_te, y_te = draw(n_test_per_class)
    return Dataset(x_tr, y_tr, x_te, y_te, n_classes=n_classes, source="synthetic")


def _read_idx_images(path: str, limit: int | None) -> tuple[np.ndarray, int]:
    with open(path, "rb") as fh:
        header = fh.read(16)
        if len(header) < 16:
            raise IdxTruncatedError(f"{path}: header truncated")
        magic, count, rows, cols = struct.unpack(">IIII", header)
        if magic != _IDX_IMAGES_MAGIC:
            raise IdxMagicError(f"{path}: expected image magic 0x803, got {magic:#010x}")
        take = count if limit is None else min(limit, count)
        data = fh.read(take * rows * cols)
        if len(data) < take * rows * cols:
            raise IdxTruncatedError(f"{path}: expected {take * rows * cols} pixels")
    pixels = np.frombuffer(data, dtype=np.uint8).reshape(take, rows * cols)
    return pixels.astype(float) / 255.0, count


def _read_idx_labels(path: str, limit: int | None) -> tuple[np.ndarray, int]:
    with open(path, "rb") as fh:
        header = fh.read(8)
        if len(header) < 8:
            raise IdxTruncatedError(f"{path}: header truncated")
        magic, count = struct.unpack(">II", header)
        if magic != _IDX_LABELS_MAGIC:
            raise IdxMagicError(f"{path}: expected label magic 0x801, got {magic:#010x}")
        take = count if limit is None else min(limit, count)
        data = fh.read(take)
        if len(data) < take:
            raise IdxTruncatedError(f"{path}: expected {take} labels")
    return np.frombuffer(data, dtype=np.uint8).astype(np.int64), count


def load_idx(images_path: str, labels_path: str, limit: int | None = None) -> Dataset:
    """Load one IDX image/label pair as the training half of a Dataset.

    Raises :class:`IdxMagicError`, :class:`IdxCountMismatchError` or
    :class:`IdxTruncatedError` for the respective malformations. Combine
    a train and a test load with :func:`merge_idx`.
    """
    x, n_images = _read_idx_images(images_path, limit)
    y, n_labels = _read_idx_labels(labels_path, limit)
    if n_images != n_labels:
        raise IdxCountMismatchError(
            f"{images_path} has {n_images} images but {labels_path} has {n_labels} labels"
        )
    n_classes = int(y.max()) + 1 if y.size else 1
    empty_x = np.zeros((0, x.shape[1]))
    empty_y = np.zeros(0, dtype=np.int64)
    return Dataset(x, y, empty_x, empty_y, n_classes=n_classes, source="idx-file")


def merge_idx(train: Dataset, test: Dataset) -> Dataset:
    """Fuse two IDX loads into one dataset (their train halves)."""
    n_classes = max(train.n_classes, test.n_classes)
    return Dataset(
        x_train=train.x_train,
        y_train=train.y_train,
        x_test=test.x_train,
        y_test=test.y_train,
        n_classes=n_classes,
        source="idx-file",
    )
