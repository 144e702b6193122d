"""Shared fixtures: synthetic datasets and IDX file builders."""

from pathlib import Path

import numpy as np
import pytest

from consolidate.core_math import make_rng
from consolidate.dataset import LabeledDataset, write_idx


def blob_dataset(n: int, dim: int, n_classes: int, seed: int,
                 spread: float = 0.25) -> LabeledDataset:
    """Linearly separable class blobs in [0, 1]^dim; learnable in a few
    epochs by the small test networks."""
    rng = make_rng(seed)
    centers = rng.random((n_classes, dim))
    labels = rng.integers(0, n_classes, size=n)
    images = centers[labels] + spread * rng.normal(size=(n, dim))
    images = np.clip(images, 0.0, 1.0)
    return LabeledDataset(images, labels.astype(np.int64))


@pytest.fixture
def mnist_like():
    """Small 784-wide synthetic dataset pair (train, test)."""
    return (blob_dataset(360, 784, 10, seed=5),
            blob_dataset(120, 784, 10, seed=6))


@pytest.fixture
def synthetic_data_dir(tmp_path: Path) -> Path:
    """A cache directory holding IDX files for a tiny synthetic MNIST."""
    def build(n, seed):
        data = blob_dataset(n, 784, 10, seed=seed)
        return (np.clip(np.rint(data.images * 255), 0, 255)
                .astype(np.uint8).reshape(n, 28, 28), data.labels)

    train_imgs, train_labels = build(420, 11)
    test_imgs, test_labels = build(140, 12)
    write_idx(train_imgs, train_labels,
              tmp_path / "train-images-idx3-ubyte",
              tmp_path / "train-labels-idx1-ubyte")
    write_idx(test_imgs, test_labels,
              tmp_path / "t10k-images-idx3-ubyte",
              tmp_path / "t10k-labels-idx1-ubyte")
    return tmp_path
