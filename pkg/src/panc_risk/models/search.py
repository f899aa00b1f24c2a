"""Stratified-fold grid search with SMOTE applied to fold-train rows only."""
from __future__ import annotations

import csv
import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .._rng import child_seed, rng_for
from ..errors import ConfigError, NumericError, PancRiskError
from ..evaluate import auroc
from ..resample import FoldPlan, SmoteParams, smote_oversample
from .artifact import fit_model


def expand_grid(grid):
    """Cartesian product in key order, last key varying fastest."""
    if not grid:
        return [{}]
    keys = list(grid)
    for k in keys:
        if not isinstance(grid[k], (list, tuple)) or len(grid[k]) == 0:
            raise ConfigError(f"grid entry {k!r} must be a non-empty list")
    return [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]


def smote_fold_trains(train, folds: FoldPlan, smote: SmoteParams | None, workers=1):
    """Oversampled fold-train matrices; fold f draws from stream (seed, "smote", f)."""

    def one(f):
        fold_train = train.take_rows(folds.folds[f][0])
        if smote is None:
            return fold_train
        return smote_oversample(fold_train, smote, rng=rng_for(smote.seed, "smote", f))

    return _map(one, range(folds.k), workers)


def _map(fn, items, workers):
    items = list(items)
    if workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(workers) as ex:
            return list(ex.map(fn, items))
    return [fn(i) for i in items]


@dataclass(frozen=True)
class SearchResult:
    kind: str
    best_index: int
    best_params: dict
    cv_table: list  # one dict per candidate

    def write_csv(self, path):
        keys = sorted({k for row in self.cv_table for k in row["params"]})
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["candidate", *keys, "mean_auroc", "sd_auroc", "selected", "error"])
            for row in self.cv_table:
                w.writerow([row["candidate"], *[row["params"].get(k, "") for k in keys],
                            "" if row["mean_auroc"] is None else repr(row["mean_auroc"]),
                            "" if row["sd_auroc"] is None else repr(row["sd_auroc"]),
                            int(row["candidate"] == self.best_index), row["error"] or ""])


def candidate_seed(seed, kind, cand, fold):
    return child_seed(seed, "model", kind, cand, fold)


def grid_search(kind, grid, train, folds: FoldPlan, smote: SmoteParams | None, seed=0, workers=1,
                fixed=None, fold_trains=None):
    """Score every candidate by mean fold-validation AUROC.

    ``fixed`` holds parameters shared by all candidates.  ``fold_trains``
    may carry precomputed oversampled fold-train matrices so several model
    kinds share one SMOTE pass.  Ties in mean AUROC go to the earliest
    candidate.  SD is the population SD over folds.
    """
    cands = expand_grid(grid)
    fixed = dict(fixed or {})
    if fold_trains is None:
        fold_trains = smote_fold_trains(train, folds, smote, workers)
    vals = [train.take_rows(v) for _, v in folds.folds]

    def cell(job):
        c, f = job
        params = {**fixed, **cands[c]}
        if kind in ("gbdt", "random_forest", "mlp"):
            params.setdefault("seed", candidate_seed(seed, kind, c, f))
        try:
            model = fit_model(kind, fold_trains[f], params)
            score = auroc(model.predict_proba(vals[f]), vals[f].labels)
            if not np.isfinite(score):
                raise NumericError("non-finite AUROC")
            return score, None
        except PancRiskError as e:
            return None, f"fold {f}: {e}"
        except (FloatingPointError, np.linalg.LinAlgError, ValueError) as e:
            return None, f"fold {f}: {type(e).__name__}: {e}"

    jobs = [(c, f) for c in range(len(cands)) for f in range(folds.k)]
    results = dict(zip(jobs, _map(cell, jobs, workers)))

    table = []
    for c, params in enumerate(cands):
        scores = [results[(c, f)][0] for f in range(folds.k)]
        errors = [results[(c, f)][1] for f in range(folds.k) if results[(c, f)][1]]
        if errors:
            row = {"candidate": c, "params": params, "fold_auroc": scores, "mean_auroc": None,
                   "sd_auroc": None, "error": "; ".join(errors)}
        else:
            arr = np.array(scores)
            row = {"candidate": c, "params": params, "fold_auroc": scores, "mean_auroc": float(arr.mean()),
                   "sd_auroc": float(arr.std()), "error": None}
        table.append(row)
    ok = [r for r in table if r["mean_auroc"] is not None]
    if not ok:
        raise NumericError(f"every {kind} candidate failed: " + " | ".join(r["error"] for r in table))
    best = max(ok, key=lambda r: (r["mean_auroc"], -r["candidate"]))
    return SearchResult(kind, best["candidate"], {**fixed, **best["params"]}, table)
