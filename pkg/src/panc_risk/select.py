"""Hybrid feature selection: forest importance driving RFECV, LASSO by
coordinate descent, and their intersection with expert overrides."""
from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ._rng import child_seed
from .errors import ConfigError, DataError, NumericError
from .evaluate import auroc
from .models.forest import ForestParams, train_random_forest
from .models.trees import TreeEnsemble
from .resample import FoldPlan

COEF_EPS = 1e-12


def _map(fn, items, workers):
    items = list(items)
    if workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(workers) as ex:
            return list(ex.map(fn, items))
    return [fn(i) for i in items]


# ---------------------------------------------------------------------------
# importance


def gini_importance(forest: TreeEnsemble, n_features=None, normalize=True):
    """Mean decrease in impurity: per tree, sum ``p(t) * delta_i(t)`` over
    the nodes splitting on each feature; average over trees, then
    normalise to sum 1 unless every score is zero (or ``normalize`` is off).

    Node gains are stored as weighted impurity decreases ``N_t * delta_i(t)``,
    so ``p(t) * delta_i(t) = gain / N_root``.
    """
    if forest is None or len(forest.trees) == 0:
        raise DataError("importance needs a trained forest")
    if forest.kind != "bagged":
        raise DataError("Gini importance is defined for bagged Gini forests")
    p = forest.n_features if n_features is None else n_features
    raw = np.zeros(p)
    for tree in forest.trees:
        internal = tree.feature >= 0
        if internal.any():
            raw += np.bincount(tree.feature[internal], weights=tree.gain[internal] / tree.cover[0], minlength=p)
    raw /= len(forest.trees)
    total = raw.sum()
    return raw / total if normalize and total > 0 else raw


# ---------------------------------------------------------------------------
# RFECV


@dataclass(frozen=True)
class RfecvConfig:
    n_estimators: int = 50
    max_depth: int | None = None
    min_samples_leaf: int = 5
    max_features: str | int | float = "sqrt"
    seed: int = 0

    def forest(self, fold):
        return ForestParams(n_estimators=self.n_estimators, max_depth=self.max_depth,
                            min_samples_leaf=self.min_samples_leaf, max_features=self.max_features,
                            seed=child_seed(self.seed, "rfecv", fold))


def rfecv(train, folds: FoldPlan, config: RfecvConfig | None = None, workers=1):
    """Backward elimination one feature at a time.

    Returns ``(selected_names, curve, eliminated)`` where ``curve`` maps
    feature count -> mean fold AUROC for every count from p down to 1 and
    ``eliminated`` lists features in removal order.
    """
    config = config or RfecvConfig()
    names = list(train.feature_names)
    if len(names) < 1:
        raise DataError("RFECV needs at least one feature")
    fold_data = [(train.take_rows(t), train.take_rows(v)) for t, v in folds.folds]
    current = list(range(len(names)))
    curve, subsets, eliminated = {}, {}, []

    def fit_fold(f):
        tr, va = fold_data[f]
        forest = train_random_forest(tr.values[:, current], tr.labels, config.forest(f))
        score = auroc(forest.predict_proba(va.values[:, current]), va.labels)
        return score, gini_importance(forest, len(current))

    while current:
        res = _map(fit_fold, range(folds.k), workers)
        curve[len(current)] = float(np.mean([r[0] for r in res]))
        subsets[len(current)] = [names[i] for i in current]
        if len(current) == 1:
            break
        imp = np.mean([r[1] for r in res], axis=0)
        drop = int(np.argmin(imp))  # first minimum = earliest column among ties
        eliminated.append(names[current[drop]])
        del current[drop]
    best = max(curve, key=lambda c: (curve[c], -c))
    return subsets[best], curve, eliminated


# ---------------------------------------------------------------------------
# LASSO


@dataclass(frozen=True, eq=False)
class LassoModel:
    coef: np.ndarray
    intercept: float
    lam: float
    objective_trace: list
    n_sweeps: int
    converged: bool

    def decision(self, X):
        return np.asarray(X, float) @ self.coef + self.intercept


def lasso_objective(X, y, coef, intercept, lam):
    r = y - intercept - X @ coef
    return float(r @ r + lam * np.abs(coef).sum())


def _as_xy(train, y=None):
    if y is None:
        X, y = train.values, train.labels
    else:
        X = train
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise DataError("LASSO inputs must be finite")
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise DataError("LASSO needs X of shape (n, p) and y of shape (n,)")
    return X, y


def lasso_fit(train, lam, y=None, warm_start=None, tol=1e-8, max_sweeps=10_000):
    """Minimise ``sum (y - b0 - X b)^2 + lam * |b|_1`` by cyclic coordinate
    descent.  ``train`` is a FeatureMatrix, or an array when ``y`` is given.

    The intercept is profiled out by centring, so each coordinate update is
    ``b_j = S(x_j' r_j, lam / 2) / x_j' x_j`` on centred data.
    """
    X, y = _as_xy(train, y)
    if lam < 0:
        raise DataError("lambda must be >= 0")
    n, p = X.shape
    xm = X.mean(axis=0)
    ym = y.mean()
    Xc = X - xm
    yc = y - ym
    sq = np.einsum("ij,ij->j", Xc, Xc)
    beta = np.zeros(p) if warm_start is None else np.array(warm_start, dtype=float)
    r = yc - Xc @ beta
    half = lam / 2.0
    trace = [float(r @ r + lam * np.abs(beta).sum())]
    converged = False
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        delta = 0.0
        for j in range(p):
            if sq[j] == 0.0:
                new = 0.0
            else:
                rho = Xc[:, j] @ r + sq[j] * beta[j]
                new = np.sign(rho) * max(abs(rho) - half, 0.0) / sq[j]
            d = new - beta[j]
            if d != 0.0:
                r -= d * Xc[:, j]
                beta[j] = new
                delta = max(delta, abs(d))
        trace.append(float(r @ r + lam * np.abs(beta).sum()))
        if delta < tol:
            converged = True
            break
    if not np.all(np.isfinite(beta)):
        raise NumericError("LASSO diverged")
    return LassoModel(beta, float(ym - xm @ beta), float(lam), trace, sweeps, converged)


def lambda_max(X, y):
    """Smallest lambda at which every coefficient is exactly zero."""
    X, y = _as_xy(X, y)
    return float(2.0 * np.max(np.abs((X - X.mean(axis=0)).T @ (y - y.mean()))))


def default_lambda_grid(X, y, n=50, ratio=1e-4):
    top = lambda_max(X, y)
    if top == 0:
        raise DataError("no feature correlates with the labels; LASSO grid is empty")
    return list(np.geomspace(top, top * ratio, n))


def lasso_path(X, y, grid):
    out, beta = [], None
    for lam in grid:
        m = lasso_fit(X, lam, y=y, warm_start=beta)
        beta = m.coef
        out.append(m)
    return out


def lasso_select(train, folds: FoldPlan, lambda_grid=None, workers=1):
    """Pick lambda by mean fold AUROC of the linear scores (ties -> larger
    lambda), refit on all training rows and keep the non-zero coefficients.

    Returns ``(selected_names, info)``; ``info`` carries the grid, CV curve
    and the full-data coefficient path.
    """
    X, y = _as_xy(train)
    if lambda_grid is None:
        lambda_grid = default_lambda_grid(X, y)
    grid = [float(v) for v in lambda_grid]
    if not grid:
        raise ConfigError("lambda grid is empty")
    if any(v < 0 for v in grid) or any(a < b for a, b in zip(grid, grid[1:])):
        raise ConfigError("lambda grid must be non-negative and sorted descending")

    def fold_scores(f):
        t, v = folds.folds[f]
        t, v = np.asarray(t), np.asarray(v)
        scores = []
        for m in lasso_path(X[t], y[t], grid):
            s = m.decision(X[v])
            scores.append(auroc(s, y[v].astype(bool)))
        return scores

    cv = np.mean(_map(fold_scores, range(folds.k), workers), axis=0)
    full = lasso_path(X, y, grid)
    if all(np.all(np.abs(m.coef) <= COEF_EPS) for m in full):
        raise DataError("LASSO grid too strong: every lambda zeroes all coefficients")
    best = int(np.flatnonzero(cv == cv.max())[0])  # grid descends, first = larger lambda
    chosen = full[best]
    names = [n for n, b in zip(train.feature_names, chosen.coef) if abs(b) > COEF_EPS]
    info = {
        "lambda_grid": grid,
        "cv_auroc": [float(v) for v in cv],
        "chosen_lambda": grid[best],
        "coef_path": [[float(b) for b in m.coef] for m in full],
        "chosen_coef": dict(zip(train.feature_names, (float(b) for b in chosen.coef))),
    }
    return names, info


# ---------------------------------------------------------------------------
# hybrid rule


@dataclass(frozen=True)
class SelectionReport:
    rfecv_curve: dict
    rfecv_set: tuple
    lasso_set: tuple
    forced_in: tuple
    forced_out: tuple
    final_set: tuple
    lasso: dict = field(default_factory=dict)
    rfecv_eliminated: tuple = ()

    def to_dict(self):
        return {
            "rfecv_curve": [{"feature_count": int(k), "mean_auroc": self.rfecv_curve[k]}
                            for k in sorted(self.rfecv_curve, reverse=True)],
            "rfecv_set": list(self.rfecv_set),
            "rfecv_eliminated": list(self.rfecv_eliminated),
            "lasso_set": list(self.lasso_set),
            "lasso": self.lasso,
            "forced_in": list(self.forced_in),
            "forced_out": list(self.forced_out),
            "final_set": list(self.final_set),
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d):
        curve = {int(r["feature_count"]): r["mean_auroc"] for r in d["rfecv_curve"]}
        return cls(curve, tuple(d["rfecv_set"]), tuple(d["lasso_set"]), tuple(d["forced_in"]),
                   tuple(d["forced_out"]), tuple(d["final_set"]), d.get("lasso", {}),
                   tuple(d.get("rfecv_eliminated", ())))

    def write_curve_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["feature_count", "mean_auroc"])
            for k in sorted(self.rfecv_curve, reverse=True):
                w.writerow([k, repr(self.rfecv_curve[k])])


def hybrid_select(rfecv_set, lasso_set, forced_in=(), forced_out=(), schema=None, **report):
    """``((rfecv & lasso) | forced_in) - forced_out``, ordered by ``schema``
    (or alphabetically when no schema is given)."""
    sets = [set(rfecv_set), set(lasso_set), set(forced_in), set(forced_out)]
    if schema is not None:
        unknown = sorted(set().union(*sets) - set(schema))
        if unknown:
            raise ConfigError(f"feature names not in the schema: {unknown}")
        rank = {n: i for i, n in enumerate(schema)}
        key = rank.__getitem__
    else:
        key = None
    final = ((sets[0] & sets[1]) | sets[2]) - sets[3]
    if not final:
        raise DataError("hybrid selection is empty; widen the LASSO grid or adjust forced_in/forced_out")
    order = lambda s: tuple(sorted(s, key=key))
    return SelectionReport(rfecv_curve=report.get("rfecv_curve", {}), rfecv_set=order(sets[0]),
                           lasso_set=order(sets[1]), forced_in=order(sets[2]), forced_out=order(sets[3]),
                           final_set=order(final), lasso=report.get("lasso", {}),
                           rfecv_eliminated=tuple(report.get("rfecv_eliminated", ())))
