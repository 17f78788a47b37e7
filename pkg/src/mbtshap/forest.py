"""Random forest classifier grown from scratch (bootstrap + Gini CART).

Used as the split-event probability model and as the Gini-importance
variable selector at each splitting node of the surrogate tree.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ._backend import get_kernels


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 10
    max_depth: int = 10
    max_features: int | None = None  # None -> ceil(sqrt(d))
    min_leaf: int = 5
    seed: int = 0

    def resolve_max_features(self, d: int) -> int:
        if self.max_features is None:
            return max(1, math.ceil(math.sqrt(d)))
        return max(1, min(int(self.max_features), d))


@dataclass(frozen=True)
class ClassificationTree:
    """Flat-array CART tree; ``feature == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    importance: np.ndarray
    max_depth: int

    @property
    def n_nodes(self) -> int:
        return self.feature.shape[0]

    def depth(self) -> int:
        best = 0
        stack = [(0, 0)]
        while stack:
            node, d = stack.pop()
            best = max(best, d)
            if self.feature[node] >= 0:
                stack.append((int(self.left[node]), d + 1))
                stack.append((int(self.right[node]), d + 1))
        return best

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "leaf_value": self.value.tolist(),
            "importance": self.importance.tolist(),
            "max_depth": self.max_depth,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ClassificationTree":
        return cls(
            np.asarray(d["feature"], dtype=np.int64),
            np.asarray(d["threshold"], dtype=np.float64),
            np.asarray(d["left"], dtype=np.int64),
            np.asarray(d["right"], dtype=np.int64),
            np.asarray(d["leaf_value"], dtype=np.float64),
            np.asarray(d["importance"], dtype=np.float64),
            int(d["max_depth"]),
        )


@dataclass(frozen=True)
class ForestModel:
    trees: tuple
    n_features: int
    max_features: int
    seed: int
    n_samples: int
    _flat: tuple = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if not self.trees:
            raise ValueError("forest needs at least one tree")
        feats, ths, lefts, rights, vals, roots = [], [], [], [], [], []
        offset = 0
        for t in self.trees:
            roots.append(offset)
            feats.append(t.feature)
            ths.append(t.threshold)
            lefts.append(np.where(t.left >= 0, t.left + offset, -1))
            rights.append(np.where(t.right >= 0, t.right + offset, -1))
            vals.append(t.value)
            offset += t.n_nodes
        flat = (
            np.concatenate(feats),
            np.concatenate(ths),
            np.concatenate(lefts),
            np.concatenate(rights),
            np.concatenate(vals),
            np.asarray(roots, dtype=np.int64),
        )
        object.__setattr__(self, "_flat", flat)

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    def to_dict(self) -> dict:
        return {
            "n_features": self.n_features,
            "max_features": self.max_features,
            "seed": self.seed,
            "n_samples": self.n_samples,
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ForestModel":
        return cls(
            tuple(ClassificationTree.from_dict(t) for t in d["trees"]),
            int(d["n_features"]),
            int(d["max_features"]),
            int(d["seed"]),
            int(d["n_samples"]),
        )


def _constant_tree(rate: float, d: int, max_depth: int) -> ClassificationTree:
    return ClassificationTree(
        np.array([-1], dtype=np.int64),
        np.zeros(1),
        np.array([-1], dtype=np.int64),
        np.array([-1], dtype=np.int64),
        np.array([rate], dtype=np.float64),
        np.zeros(d),
        max_depth,
    )


def _tree_draws(rng: np.random.Generator, n: int, d: int, mf: int, max_depth: int, min_leaf: int) -> np.ndarray:
    # one sorted feature sample per split attempt, in build (preorder) order
    n_attempts = min((1 << max_depth) - 1, 2 * n // max(min_leaf, 1) + 1)
    keys = rng.random((max(n_attempts, 0), d))
    return np.sort(np.argsort(keys, axis=1, kind="stable")[:, :mf], axis=1).astype(np.int64)


def fit_forest(features, labels, config: ForestConfig = ForestConfig(), threads: int = 1, backend: str | None = None) -> ForestModel:
    """Bagged CART forest on binary labels.

    Each tree gets a bootstrap resample of size N and samples
    ``max_features`` candidate features without replacement at every split.
    Randomness for tree ``t`` comes from ``SeedSequence([seed, t])`` so the
    result does not depend on ``threads``.
    """
    X = np.ascontiguousarray(features, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(labels).reshape(-1)
    n, d = X.shape
    if n < 2:
        raise ValueError(f"need at least 2 samples, got {n}")
    if y.shape[0] != n:
        raise ValueError("features and labels disagree on N")
    if d < 1:
        raise ValueError("need at least one feature")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0/1")
    y = y.astype(np.uint8)
    mf = config.resolve_max_features(d)
    rate = float(y.mean())
    if rate in (0.0, 1.0):
        trees = tuple(_constant_tree(rate, d, config.max_depth) for _ in range(config.n_trees))
        return ForestModel(trees, d, mf, config.seed, n)

    kern = get_kernels(backend)

    def grow(t: int) -> ClassificationTree:
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, t]))
        samples = rng.integers(0, n, size=n)
        draws = _tree_draws(rng, n, d, mf, config.max_depth, config.min_leaf)
        f, th, le, ri, va, imp = kern.fit_tree(X, y, samples, draws, config.max_depth, config.min_leaf)
        return ClassificationTree(f, th, le, ri, va, imp / n, config.max_depth)

    if threads > 1 and config.n_trees > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            trees = tuple(pool.map(grow, range(config.n_trees)))
    else:
        trees = tuple(grow(t) for t in range(config.n_trees))
    return ForestModel(trees, d, mf, config.seed, n)


def predict_proba(model: ForestModel, rows, backend: str | None = None) -> np.ndarray:
    """Mean of per-tree leaf positive fractions for each row."""
    X = np.asarray(rows, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, model.n_features) if X.size else X.reshape(0, model.n_features)
    if X.shape[1] != model.n_features:
        raise ValueError(f"row width {X.shape[1]} != training width {model.n_features}")
    if X.shape[0] == 0:
        return np.zeros(0)
    return get_kernels(backend).predict_forest(X, *model._flat)


def gini_importance(model: ForestModel) -> np.ndarray:
    """Per-feature impurity decrease averaged over trees, normalised to sum 1."""
    imp = np.mean([t.importance for t in model.trees], axis=0)
    total = imp.sum()
    if total <= 0:
        return np.full(model.n_features, 1.0 / model.n_features)
    return imp / total
