"""Random forest: CART trees, Gini splits, bootstrap bagging, OOB score.

Trees are nested dicts (internal: feature, threshold, left, right;
leaf: label), so a trained forest serializes to JSON unchanged. Split
search sorts each candidate feature once and sweeps cut points with
cumulative class counts. Each tree draws its bootstrap sample and
feature subsets from its own generator seeded by (seed, tree_index),
so forests are reproducible and trees are independent.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..core import LABEL_ORDER, TrajectoryLabel
from ..errors import DataError
from .model_io import data_digest

N_CLASSES = len(LABEL_ORDER)


@dataclass(frozen=True)
class RfConfig:
    trees: int = 100
    max_depth: Optional[int] = None
    features_per_split: Optional[int] = None  # None: floor(sqrt(n_features))
    seed: int = 0

    def __post_init__(self):
        if self.trees < 1:
            raise DataError(f"tree count must be >= 1, got {self.trees}")
        if self.max_depth is not None and self.max_depth < 1:
            raise DataError(f"max_depth must be >= 1 or None, got {self.max_depth}")
        if self.features_per_split is not None and self.features_per_split < 1:
            raise DataError(
                f"features_per_split must be >= 1 or None, got {self.features_per_split}"
            )


@dataclass(frozen=True)
class RandomForestModel:
    kind: str
    config: RfConfig
    n_features: int
    trees: tuple[dict, ...]
    manifest: dict

    def to_json_dict(self) -> dict:
        cfg = self.config
        return {
            "kind": self.kind,
            "config": {
                "trees": cfg.trees,
                "max_depth": cfg.max_depth,
                "features_per_split": cfg.features_per_split,
                "seed": cfg.seed,
            },
            "n_features": self.n_features,
            "trees_data": list(self.trees),
            "manifest": self.manifest,
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "RandomForestModel":
        cfg = RfConfig(**obj["config"])
        return cls(
            kind="rf",
            config=cfg,
            n_features=int(obj["n_features"]),
            trees=tuple(obj["trees_data"]),
            manifest=dict(obj["manifest"]),
        )


def _gini_sweep(values: np.ndarray, labels: np.ndarray) -> tuple[float, float]:
    """Best (cost, threshold) over all cut points of one feature.

    Returns (inf, nan) when the feature is constant on this node.
    """
    order = np.argsort(values, kind="stable")
    v = values[order]
    n = v.size
    one_hot = np.zeros((n, N_CLASSES))
    one_hot[np.arange(n), labels[order]] = 1.0
    prefix = one_hot.cumsum(axis=0)
    cuts = np.nonzero(v[:-1] < v[1:])[0]
    if cuts.size == 0:
        return np.inf, np.nan
    left = prefix[cuts]
    total = prefix[-1]
    right = total - left
    n_left = (cuts + 1).astype(float)
    n_right = n - n_left
    gini_left = 1.0 - np.sum((left / n_left[:, None]) ** 2, axis=1)
    gini_right = 1.0 - np.sum((right / n_right[:, None]) ** 2, axis=1)
    cost = (n_left * gini_left + n_right * gini_right) / n
    best = int(np.argmin(cost))
    threshold = 0.5 * (v[cuts[best]] + v[cuts[best] + 1])
    return float(cost[best]), float(threshold)


def _leaf(labels: np.ndarray) -> dict:
    counts = np.bincount(labels, minlength=N_CLASSES)
    # argmax takes the first maximum, which is the fixed label order
    return {"label": int(np.argmax(counts))}


def _grow(
    x: np.ndarray,
    y: np.ndarray,
    idx: np.ndarray,
    depth: int,
    cfg: RfConfig,
    m_features: int,
    rng: np.random.Generator,
) -> dict:
    labels_here = y[idx]
    if (
        idx.size < 2
        or np.all(labels_here == labels_here[0])
        or (cfg.max_depth is not None and depth >= cfg.max_depth)
    ):
        return _leaf(labels_here)
    features = rng.choice(x.shape[1], size=m_features, replace=False)
    best_cost = np.inf
    best_feature = -1
    best_threshold = np.nan
    for f in features:
        cost, threshold = _gini_sweep(x[idx, f], labels_here)
        if cost < best_cost:
            best_cost = cost
            best_feature = int(f)
            best_threshold = threshold
    if best_feature < 0:
        return _leaf(labels_here)
    goes_left = x[idx, best_feature] < best_threshold
    left_idx = idx[goes_left]
    right_idx = idx[~goes_left]
    return {
        "feature": best_feature,
        "threshold": best_threshold,
        "left": _grow(x, y, left_idx, depth + 1, cfg, m_features, rng),
        "right": _grow(x, y, right_idx, depth + 1, cfg, m_features, rng),
    }


def _tree_predict(node: dict, x: np.ndarray) -> int:
    while "label" not in node:
        node = node["left"] if x[node["feature"]] < node["threshold"] else node["right"]
    return node["label"]


def train_rf(x: np.ndarray, y: np.ndarray, cfg: RfConfig) -> RandomForestModel:
    """Grow cfg.trees CART trees on bootstrap resamples of (x, y)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise DataError(f"training features must be a non-empty 2-d array, got shape {x.shape}")
    if y.shape != (x.shape[0],):
        raise DataError(f"labels shape {y.shape} does not match {x.shape[0]} rows")
    if not np.all(np.isfinite(x)):
        raise DataError("training features must be finite")
    if np.unique(y).size < 2:
        raise DataError("training data must contain at least 2 classes")
    n, d = x.shape
    m_features = cfg.features_per_split
    if m_features is None:
        m_features = int(np.floor(np.sqrt(d)))
    m_features = min(m_features, d)

    trees: list[dict] = []
    oob_votes = np.zeros((n, N_CLASSES))
    for tree_index in range(cfg.trees):
        rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, tree_index)))
        sample = rng.integers(0, n, size=n)
        tree = _grow(x, y, sample, 0, cfg, m_features, rng)
        trees.append(tree)
        oob = np.setdiff1d(np.arange(n), sample, assume_unique=False)
        for i in oob:
            oob_votes[i, _tree_predict(tree, x[i])] += 1.0

    covered = oob_votes.sum(axis=1) > 0
    if np.any(covered):
        oob_pred = np.argmax(oob_votes[covered], axis=1)
        oob_accuracy = float(np.mean(oob_pred == y[covered]))
    else:
        oob_accuracy = 0.0

    grown = tuple(trees)
    train_pred = np.array([int(np.argmax(_forest_votes(grown, row))) for row in x])
    manifest = {
        "config": {
            "trees": cfg.trees,
            "max_depth": cfg.max_depth,
            "features_per_split": cfg.features_per_split,
            "seed": cfg.seed,
        },
        "seed": cfg.seed,
        "data_sha256": data_digest(x, y),
        "n_samples": n,
        "n_features": d,
        "features_per_split": m_features,
        "oob_accuracy": oob_accuracy,
        "train_accuracy": float(np.mean(train_pred == y)),
    }
    return RandomForestModel(
        kind="rf", config=cfg, n_features=d, trees=grown, manifest=manifest
    )


def _forest_votes(trees: Sequence[dict], x: np.ndarray) -> np.ndarray:
    votes = np.zeros(N_CLASSES)
    for tree in trees:
        votes[_tree_predict(tree, x)] += 1.0
    return votes


def predict_rf(
    model: RandomForestModel, x: np.ndarray
) -> tuple[TrajectoryLabel, np.ndarray]:
    """Majority vote with fixed-label-order tie-break; returns vote shares."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.n_features,):
        raise DataError(
            f"feature vector shape {x.shape} does not match trained dimension "
            f"({model.n_features},)"
        )
    votes = _forest_votes(model.trees, x)
    shares = votes / votes.sum()
    return LABEL_ORDER[int(np.argmax(votes))], shares


def predict_rf_batch(
    model: RandomForestModel, x: np.ndarray
) -> tuple[list[TrajectoryLabel], np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.n_features:
        raise DataError(
            f"feature matrix shape {x.shape} does not match trained dimension "
            f"{model.n_features}"
        )
    labels = []
    shares = np.zeros((x.shape[0], N_CLASSES))
    for i, row in enumerate(x):
        label, share = predict_rf(model, row)
        labels.append(label)
        shares[i] = share
    return labels, shares
