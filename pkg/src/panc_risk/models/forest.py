"""Bagged CART forest with Gini splits."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .._rng import rng_for
from ..errors import DataError
from .trees import GINI, TreeEnsemble, grow_tree, presort


@dataclass(frozen=True)
class ForestParams:
    n_estimators: int = 100
    max_depth: int | None = None
    min_samples_leaf: int = 1
    max_features: str | int | float = "sqrt"
    bootstrap: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.n_estimators < 1:
            raise DataError("n_estimators must be >= 1")
        if self.min_samples_leaf < 1:
            raise DataError("min_samples_leaf must be >= 1")

    def n_split_features(self, p):
        mf = self.max_features
        if mf is None or mf == "all":
            k = p
        elif mf == "sqrt":
            k = int(math.sqrt(p))
        elif mf == "log2":
            k = int(math.log2(p))
        elif isinstance(mf, float):
            k = int(mf * p)
        else:
            k = int(mf)
        return min(max(k, 1), p)

    def to_dict(self):
        return asdict(self)


def _positive_fraction(A, B):
    return np.where(A > 0, B / np.where(A > 0, A, 1.0), 0.0)


def train_random_forest(X, y, params: ForestParams, oob=None) -> TreeEnsemble:
    """Fit the forest.  Pass a dict as ``oob`` to receive out-of-bag
    probability sums and counts (keys ``"sum"``, ``"count"``)."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.unique(y).size < 2:
        raise DataError("random forest needs both classes in the training labels")
    n, p = X.shape
    order = presort(X)
    k = params.n_split_features(p)
    trees = []
    if oob is not None:
        oob["sum"], oob["count"] = np.zeros(n), np.zeros(n)
    for t in range(params.n_estimators):
        rng = rng_for(params.seed, "forest", t)
        if params.bootstrap:
            w = np.bincount(rng.integers(0, n, size=n), minlength=n).astype(float)
        else:
            w = np.ones(n)

        def mask(n_nodes, rng=rng):
            if k == p:
                return np.ones((n_nodes, p), dtype=np.bool_)
            # k features per node without replacement: the k smallest random keys
            keys = rng.random((n_nodes, p))
            kth = np.partition(keys, k - 1, axis=1)[:, k - 1 : k]
            return keys <= kth

        tree = grow_tree(X, order, w, w * y, w, criterion=GINI, leaf_value=_positive_fraction,
                         max_depth=params.max_depth, growth="depthwise",
                         min_child=float(params.min_samples_leaf), feature_mask=mask)
        trees.append(tree)
        if oob is not None:
            out = w == 0
            oob["sum"][out] += tree.predict(X[out])
            oob["count"][out] += 1
    return TreeEnsemble(tuple(trees), 0.0, "bagged", 1.0, p)
