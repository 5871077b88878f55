"""Shared fixtures: a hand-built miniature dataset and small-net helpers."""

from __future__ import annotations

import numpy as np
import pytest

from rlvc.data import ZslDataset


def tiny_dataset() -> ZslDataset:
    """Two seen classes, one unseen, d=3, d_z=2, six feature rows.

    Class means are far apart so heads trained on it reach perfect accuracy.
    """
    features = np.array(
        [
            [10.0, 0.0, 0.0],
            [10.5, 0.2, -0.1],  # class 0 train
            [0.0, 10.0, 0.0],
            [0.1, 10.4, 0.3],  # class 1 train
            [10.2, -0.3, 0.1],  # class 0 test_seen
            [-0.2, 0.1, 10.0],  # class 2 test_unseen
        ]
    )
    labels = np.array([0, 0, 1, 1, 0, 2])
    splits = np.array(
        ["train", "train", "train", "train", "test_seen", "test_unseen"],
        dtype=object,
    )
    prototypes = np.array([[1.0, 0.0], [0.0, 1.0], [0.7, 0.7]])
    roles = np.array(["seen", "seen", "unseen"], dtype=object)
    return ZslDataset(features, labels, splits, prototypes, roles)


@pytest.fixture
def tiny_ds() -> ZslDataset:
    return tiny_dataset()


def make_separable(n_per_class: int, d: int, n_classes: int, seed: int = 0):
    """Gaussian blobs at 8 * one-hot means; linearly separable by margin."""
    rng = np.random.default_rng(seed)
    feats, labels = [], []
    for c in range(n_classes):
        mean = np.zeros(d)
        mean[c % d] = 8.0 * (1 + c // d)
        feats.append(mean + rng.standard_normal((n_per_class, d)))
        labels.extend([c] * n_per_class)
    return np.concatenate(feats, axis=0), np.asarray(labels)
