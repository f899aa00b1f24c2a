"""Second-order gradient boosting for binary logistic loss."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .._rng import rng_for
from ..errors import DataError
from .trees import NEWTON, TreeEnsemble, grow_tree, presort, sigmoid


@dataclass(frozen=True)
class GbdtParams:
    eta: float = 0.1
    n_rounds: int = 200
    max_depth: int = 4
    min_child_weight: float = 1.0
    subsample: float = 1.0
    colsample_bytree: float = 1.0
    reg_alpha: float = 0.0
    reg_lambda: float = 1.0
    growth: str = "depthwise"
    max_leaves: int = 15
    seed: int = 0
    base_margin: float | None = None  # None: log-odds of training prevalence

    def __post_init__(self):
        if not 0.0 < self.eta <= 1.0:
            raise DataError("eta must lie in (0, 1]")
        if not (0.0 < self.subsample <= 1.0 and 0.0 < self.colsample_bytree <= 1.0):
            raise DataError("subsample and colsample_bytree must lie in (0, 1]")
        if self.reg_alpha < 0 or self.reg_lambda < 0:
            raise DataError("regularisation terms must be >= 0")
        if self.n_rounds < 0 or self.max_depth < 0:
            raise DataError("n_rounds and max_depth must be >= 0")
        if self.growth not in ("depthwise", "leafwise"):
            raise DataError(f"unknown growth policy {self.growth!r}")

    def to_dict(self):
        return asdict(self)


def leaf_weight(G, H, reg_lambda, reg_alpha=0.0):
    """Newton step ``-sign(G) * max(|G| - alpha, 0) / (H + lambda)``."""
    G = np.asarray(G, dtype=float)
    H = np.asarray(H, dtype=float)
    t = np.sign(G) * np.maximum(np.abs(G) - reg_alpha, 0.0)
    d = H + reg_lambda
    return np.where(d > 0, -t / np.where(d > 0, d, 1.0), 0.0)


def split_gain(GL, HL, GR, HR, reg_lambda, reg_alpha=0.0):
    def score(g, h):
        t = np.sign(g) * np.maximum(np.abs(g) - reg_alpha, 0.0)
        return t * t / (h + reg_lambda) if h + reg_lambda > 0 else 0.0

    return 0.5 * (score(GL, HL) + score(GR, HR) - score(GL + GR, HL + HR))


def logloss(y, p):
    p = np.clip(p, 1e-15, 1 - 1e-15)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log1p(-p)))


def train_gbdt(X, y, params: GbdtParams, loss_trace=None) -> TreeEnsemble:
    """Fit a boosted ensemble; ``loss_trace`` (a list) receives the training
    log loss after each round when given."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.unique(y).size < 2:
        raise DataError("GBDT needs both classes in the training labels")
    n, p = X.shape
    if params.base_margin is None:
        prev = y.mean()
        base = float(np.log(prev / (1.0 - prev)))
    else:
        base = float(params.base_margin)
    order = presort(X)
    rng = rng_for(params.seed, "gbdt")
    margin = np.full(n, base)
    trees = []

    def leaf(G, H):
        return leaf_weight(G, H, params.reg_lambda, params.reg_alpha)

    n_cols = max(1, int(round(params.colsample_bytree * p)))
    for _ in range(params.n_rounds):
        prob = sigmoid(margin)
        g = prob - y
        h = prob * (1.0 - prob)
        if params.subsample < 1.0:
            w = (rng.random(n) < params.subsample).astype(float)
            if not w.any():
                w[rng.integers(n)] = 1.0
        else:
            w = np.ones(n)
        if n_cols < p:
            cols = np.zeros(p, dtype=np.bool_)
            cols[rng.choice(p, size=n_cols, replace=False)] = True
            mask = lambda k, cols=cols: np.broadcast_to(cols, (k, p)).copy()
        else:
            mask = None
        tree = grow_tree(X, order, g * w, h * w, w, criterion=NEWTON, leaf_value=leaf,
                         max_depth=params.max_depth,
                         max_leaves=params.max_leaves if params.growth == "leafwise" else None,
                         growth=params.growth, min_child=params.min_child_weight,
                         reg_lambda=params.reg_lambda, reg_alpha=params.reg_alpha, feature_mask=mask)
        trees.append(tree)
        margin = margin + params.eta * tree.predict(X)
        if loss_trace is not None:
            loss_trace.append(logloss(y, sigmoid(margin)))
    return TreeEnsemble(tuple(trees), base, "boosted", params.eta, p)
