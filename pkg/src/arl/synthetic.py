"""Small synthetic datasets built through the regular schema/encode path."""

from __future__ import annotations

import numpy as np
import pandas as pd

from arl.dataset import ProtectedFeature, RawTable, Schema, encode

REGION_SCHEMA = Schema(
    columns={"x1": "numeric", "x2": "numeric", "region": "protected", "y": "label"},
    label="y",
    positive="1",
    protected=(ProtectedFeature("region", {"major": "A", "minor": "B"}),),
    name="two-region",
)


def _to_dataset(X, y, region, schema=REGION_SCHEMA, stats=None):
    frame = pd.DataFrame(
        {
            "x1": X[:, 0],
            "x2": X[:, 1],
            "region": np.where(region == 0, "major", "minor"),
            "y": np.where(y > 0.5, "1", "0"),
        }
    )
    return encode(RawTable(frame), schema, stats)


def two_region_arrays(seed, n_major=1000, ratio=10, offset=(-1.0, -3.0), spread=0.7, threshold=-1.5):
    """Majority blob labelled by x1 > 0; a ``ratio``-times smaller blob, shifted by
    ``offset`` and labelled by x1 > ``threshold``.

    The minority blob sits at low x2, so it is identifiable from x, and most of
    its positives fall on the wrong side of the majority's boundary.
    """
    rng = np.random.default_rng(seed)
    n_minor = n_major // ratio
    xa = rng.normal(0.0, 1.0, (n_major, 2))
    ya = (xa[:, 0] > 0).astype(float)
    xb = rng.normal(0.0, spread, (n_minor, 2)) + np.asarray(offset)
    yb = (xb[:, 0] > threshold).astype(float)
    X = np.vstack([xa, xb])
    y = np.concatenate([ya, yb])
    region = np.r_[np.zeros(n_major, int), np.ones(n_minor, int)]
    return X, y, region


def two_region_split(seed, **kwargs):
    """Independent train and test draws; the test draw reuses the train encoding."""
    train, stats = _to_dataset(*two_region_arrays(seed, **kwargs))
    test, _ = _to_dataset(*two_region_arrays(seed + 100_000, **kwargs), stats=stats)
    return train, test


def separable_blobs(seed, n=200, gap=4.0, margin=0.5):
    """Two Gaussian blobs ``gap`` standard deviations apart along a random direction.

    Points within ``margin`` of the midplane are redrawn, so the classes are
    linearly separable by construction (the midplane separates them).
    """
    rng = np.random.default_rng(seed)
    direction = rng.normal(size=2)
    direction /= np.linalg.norm(direction)
    y = np.r_[np.zeros(n // 2), np.ones(n - n // 2)]
    X = np.empty((n, 2))
    for i, label in enumerate(y):
        while True:
            x = rng.normal(size=2) + direction * gap * (label - 0.5)
            side = x @ direction
            if abs(side) >= margin and (side > 0) == (label > 0.5):
                break
        X[i] = x
    region = (rng.random(n) < 0.5).astype(int)
    ds, _ = _to_dataset(X, y, region)
    return ds


def random_tabular(seed, n=1000):
    """Noisy logistic data with a random binary 'region' column."""
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 2))
    w = rng.normal(size=2)
    y = (rng.random(n) < 1.0 / (1.0 + np.exp(-(X @ w) * 2))).astype(float)
    region = (X[:, 1] + rng.normal(size=n) > 0.8).astype(int)
    ds, _ = _to_dataset(X, y, region)
    return ds


def predict_accuracy_by_group(learner, dataset):
    """Accuracy at threshold 0.5 for every group id in ``dataset.s``."""
    pred = learner.predict(dataset.X) >= 0.5
    correct = pred == (dataset.y > 0.5)
    return {name: float(correct[dataset.s == k].mean()) for k, name in enumerate(dataset.group_names)}
