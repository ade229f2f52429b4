"""Dataset ingestion and amplitude encoding.

Pixel intensities map linearly onto input photon amplitudes: every loaded
feature is byte_value / 255, so amplitudes always lie in [0, 1].

Supported containers:
  MNIST    IDX files (big-endian, magic 2051 for images / 2049 for labels),
           plain or gzip-compressed.
  SAT-6    CSV export: headerless rows of 3136 integers in [0, 255], laid
           out channel-planar (R, G, B, NIR blocks of 784 pixels each,
           row-major 28x28); the near-infrared block is discarded.  Labels
           are one-hot rows of width 6.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "Dataset",
    "Batch",
    "load_mnist",
    "load_sat6_csv",
    "subsample",
    "batches",
    "synthetic_dataset",
    "MNIST_FILES",
    "SAT6_FILES",
]

IMAGE_MAGIC = 2051
LABEL_MAGIC = 2049

# conventional file names looked up inside a data directory
MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}
SAT6_FILES = {
    "train": ("X_train_sat6.csv", "y_train_sat6.csv"),
    "test": ("X_test_sat6.csv", "y_test_sat6.csv"),
}

_SHUFFLE_TAG = 41


@dataclass
class Dataset:
    """Immutable sample store: features (N, ...) in [0, 1], integer labels (N,)."""

    features: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.shape[0] != self.labels.shape[0]:
            raise ValueError("feature/label counts differ")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def feature_shape(self) -> tuple[int, ...]:
        return self.features.shape[1:]


@dataclass
class Batch:
    features: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return self.features.shape[0]


def _open_maybe_gzip(path):
    with open(path, "rb") as f:
        magic = f.read(2)
    if magic == b"\x1f\x8b":
        return gzip.open(path, "rb")
    return open(path, "rb")


def _read_exact(f, n: int, path) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise ValueError(f"truncated file {path}: wanted {n} bytes, got {len(data)}")
    return data


def load_mnist(images_path, labels_path) -> Dataset:
    """Load an IDX image/label pair into flat amplitude vectors.

    Images become row-major float vectors of length rows*cols scaled by
    1/255; the sample counts of the two files are cross-checked.
    """
    with _open_maybe_gzip(images_path) as f:
        magic, count, rows, cols = struct.unpack(">IIII", _read_exact(f, 16, images_path))
        if magic != IMAGE_MAGIC:
            raise ValueError(
                f"{images_path}: bad magic {magic}, expected {IMAGE_MAGIC} (IDX image file)"
            )
        pixels = np.frombuffer(
            _read_exact(f, count * rows * cols, images_path), dtype=np.uint8
        )
    with _open_maybe_gzip(labels_path) as f:
        magic, label_count = struct.unpack(">II", _read_exact(f, 8, labels_path))
        if magic != LABEL_MAGIC:
            raise ValueError(
                f"{labels_path}: bad magic {magic}, expected {LABEL_MAGIC} (IDX label file)"
            )
        labels = np.frombuffer(_read_exact(f, label_count, labels_path), dtype=np.uint8)
    if count != label_count:
        raise ValueError(
            f"image/label count mismatch: {count} images vs {label_count} labels"
        )
    features = pixels.reshape(count, rows * cols).astype(float) / 255.0
    return Dataset(features, labels.astype(np.int64), n_classes=10)


def load_sat6_csv(x_path, y_path) -> Dataset:
    """Load a SAT-6 CSV export into (28, 28, 3) RGB amplitude maps.

    Each X row holds 3136 byte values, channel-planar R, G, B, NIR; the
    NIR block is dropped.  Each y row is one-hot of width 6.
    """
    x = _load_csv_ints(x_path)
    if x.ndim != 2 or x.shape[1] != 3136:
        raise ValueError(
            f"{x_path}: expected rows of 3136 values (28x28 pixels x 4 channels), "
            f"got shape {x.shape}"
        )
    y = _load_csv_ints(y_path)
    if y.ndim != 2 or y.shape[1] != 6:
        raise ValueError(f"{y_path}: expected one-hot rows of width 6, got shape {y.shape}")
    if x.shape[0] != y.shape[0]:
        raise ValueError(f"X/Y row count mismatch: {x.shape[0]} vs {y.shape[0]}")
    onehot = (y == 1).sum(axis=1)
    if np.any(onehot != 1) or np.any((y != 0) & (y != 1)):
        bad = int(np.argmax((onehot != 1) | ((y != 0) & (y != 1)).any(axis=1)))
        raise ValueError(f"{y_path}: row {bad} is not one-hot")
    labels = np.argmax(y, axis=1).astype(np.int64)
    # (N, 4, 28, 28) channel-planar -> (N, 28, 28, 3), NIR discarded
    maps = x.reshape(-1, 4, 28, 28).transpose(0, 2, 3, 1)[..., :3]
    features = maps.astype(float) / 255.0
    return Dataset(features, labels, n_classes=6)


def _load_csv_ints(path) -> np.ndarray:
    with _open_maybe_gzip(path) as f:
        return np.loadtxt(f, delimiter=",", dtype=np.int64, ndmin=2)


def subsample(ds: Dataset, n: int, seed) -> Dataset:
    """Stratified draw of n samples without replacement.

    Class proportions are preserved to within one sample per class
    (largest-remainder apportionment); deterministic given the seed.
    """
    if not 1 <= n <= len(ds):
        raise ValueError(f"subsample size {n} out of range [1, {len(ds)}]")
    rng = np.random.default_rng(seed)
    classes, counts = np.unique(ds.labels, return_counts=True)
    quotas = n * counts / len(ds)
    take = np.floor(quotas).astype(int)
    remainder = n - take.sum()
    if remainder > 0:
        order = np.argsort(-(quotas - take), kind="stable")
        take[order[:remainder]] += 1
    picked = []
    for cls, k in zip(classes, take):
        idx = np.flatnonzero(ds.labels == cls)
        if k > 0:
            picked.append(rng.choice(idx, size=k, replace=False))
    chosen = rng.permutation(np.concatenate(picked))
    return Dataset(ds.features[chosen], ds.labels[chosen], ds.n_classes)


def batches(ds: Dataset, batch_size: int, seed, epoch_index: int = 0, shuffle: bool = True):
    """Yield minibatches covering every sample exactly once.

    The order is an epoch-specific shuffle derived from (seed, epoch);
    the final batch may be short.
    """
    if batch_size < 1:
        raise ValueError(f"batch size must be >= 1, got {batch_size}")
    n = len(ds)
    if shuffle:
        rng = np.random.default_rng([_to_seed_int(seed), _SHUFFLE_TAG, epoch_index])
        order = rng.permutation(n)
    else:
        order = np.arange(n)
    for start in range(0, n, batch_size):
        idx = order[start : start + batch_size]
        yield Batch(ds.features[idx], ds.labels[idx])


def _to_seed_int(seed) -> int:
    return int(seed) & 0xFFFFFFFFFFFFFFFF


def synthetic_dataset(
    n: int,
    n_classes: int = 10,
    feature_shape: tuple[int, ...] = (64,),
    noise: float = 0.15,
    seed: int = 0,
) -> Dataset:
    """Noisy-prototype classification set for demos and desk-scale tests.

    Each class gets a random binary prototype pattern in [0, 1]; samples
    are the prototype plus clipped Gaussian noise.  Solvable by
    construction, with difficulty controlled by ``noise``.
    """
    rng = np.random.default_rng(seed)
    prototypes = rng.uniform(0.0, 1.0, (n_classes,) + tuple(feature_shape))
    labels = rng.integers(0, n_classes, n)
    feats = prototypes[labels] + rng.normal(0.0, noise, (n,) + tuple(feature_shape))
    return Dataset(np.clip(feats, 0.0, 1.0), labels, n_classes)
