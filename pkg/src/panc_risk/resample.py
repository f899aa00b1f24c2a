"""Stratified k-fold plans and SMOTE oversampling of training folds."""
from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from ._rng import rng_for
from .errors import DataError
from .preprocess import FeatureMatrix


@dataclass(frozen=True)
class FoldPlan:
    folds: tuple  # ((train_rows, val_rows), ...)
    seed: int

    @property
    def k(self):
        return len(self.folds)

    def to_json(self):
        return json.dumps({"seed": self.seed,
                           "folds": [{"train": list(t), "val": list(v)} for t, v in self.folds]})

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls(tuple((tuple(f["train"]), tuple(f["val"])) for f in d["folds"]), d["seed"])


def make_folds(labels, k, seed) -> FoldPlan:
    """Deal each shuffled class round-robin over the k validation folds."""
    labels = np.asarray(labels, dtype=bool)
    if k < 2:
        raise DataError("need at least 2 folds")
    fold_of = np.empty(labels.size, dtype=int)
    offset = 0
    for cls in (False, True):
        idx = np.flatnonzero(labels == cls)
        if idx.size < k:
            raise DataError(f"class {int(cls)} has {idx.size} rows, fewer than k={k}")
        idx = idx[rng_for(seed, "folds", int(cls)).permutation(idx.size)]
        # continue the deal where the previous class stopped so fold sizes stay within 1
        fold_of[idx] = (np.arange(idx.size) + offset) % k
        offset = (offset + idx.size) % k
    folds = []
    for f in range(k):
        val = np.flatnonzero(fold_of == f)
        train = np.flatnonzero(fold_of != f)
        folds.append((tuple(train.tolist()), tuple(val.tolist())))
    return FoldPlan(tuple(folds), int(seed))


@dataclass(frozen=True)
class SmoteParams:
    k_neighbors: int = 5
    target_ratio: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.k_neighbors < 1:
            raise DataError("k_neighbors must be >= 1")
        if self.target_ratio <= 0:
            raise DataError("target_ratio must be positive")


def nearest_minority_neighbors(X, k):
    """Indices of the k nearest other rows (Euclidean, ties by row index).

    Squared distances are accumulated one column at a time in column
    order, so a column that is constant contributes exact zeros and leaves
    every distance bitwise unchanged.
    """
    m = X.shape[0]
    d2 = np.zeros((m, m))
    for j in range(X.shape[1]):
        diff = X[:, j, None] - X[None, :, j]
        d2 += diff * diff
    np.fill_diagonal(d2, np.inf)
    return np.argsort(d2, axis=1, kind="stable")[:, :k]


def smote_oversample(train: FeatureMatrix, params: SmoteParams, rng=None, return_parents=False):
    """Append synthetic minority rows ``x_i + u * (x_nn - x_i)``.

    Parents are visited round-robin over the minority rows; for each, one of
    its ``k_neighbors`` nearest minority neighbours and ``u ~ U(0, 1)`` are
    drawn.  Rows are appended until minority = round(target_ratio * majority).
    """
    if not train.mask.all():
        raise DataError("SMOTE needs a fully imputed matrix")
    y = train.labels
    n_pos = int(y.sum())
    minority_cls = n_pos <= y.size - n_pos
    minority = np.flatnonzero(y == minority_cls)
    n_min, n_maj = minority.size, y.size - minority.size
    if n_min <= params.k_neighbors:
        raise DataError(f"minority count {n_min} must exceed k_neighbors={params.k_neighbors}")
    target = int(round(params.target_ratio * n_maj))
    n_new = max(target - n_min, 0)
    if rng is None:
        rng = rng_for(params.seed, "smote")

    Xm = train.values[minority]
    parents = np.arange(n_new) % n_min
    if n_new:
        nn = nearest_minority_neighbors(Xm, params.k_neighbors)
        pick = rng.integers(0, params.k_neighbors, size=n_new)
        u = rng.random(n_new)
        partners = nn[parents, pick]
        new = Xm[parents] + u[:, None] * (Xm[partners] - Xm[parents])
    else:
        partners = np.zeros(0, int)
        u = np.zeros(0)
        new = np.zeros((0, train.shape[1]))

    out = replace(
        train,
        values=np.vstack([train.values, new]),
        mask=np.ones((y.size + n_new, train.shape[1]), bool),
        labels=np.concatenate([y, np.full(n_new, minority_cls)]),
        row_ids=train.row_ids + tuple(f"smote-{i}" for i in range(n_new)),
        synthetic=np.concatenate([train.synthetic, np.ones(n_new, bool)]),
    )
    if return_parents:
        return out, (minority[parents], minority[partners], u)
    return out
