"""Leave-one-feature-out ablation measured as the change in test AUROC."""
from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .._rng import child_seed, rng_for, stream_fingerprint
from ..errors import DataError, PancRiskError
from ..evaluate import auroc
from ..models.artifact import fit_model
from ..resample import SmoteParams, smote_oversample


@dataclass(frozen=True)
class AblationResult:
    features: tuple
    repeats: int
    baseline: tuple  # full-model AUROC per repeat (None if that fit failed)
    ablated: dict  # feature -> per-repeat AUROC without it
    deltas: dict  # feature -> per-repeat delta, None where a cell failed
    failures: dict  # (feature or "", repeat) -> message
    streams: dict  # (feature or "", repeat) -> SMOTE stream fingerprint

    def summary(self):
        out = {}
        for f in self.features:
            d = np.array([v for v in self.deltas[f] if v is not None])
            if d.size:
                q1, med, q3 = np.percentile(d, [25, 50, 75])
                out[f] = {"median": float(med), "q1": float(q1), "q3": float(q3), "iqr": float(q3 - q1),
                          "n": int(d.size)}
            else:
                out[f] = {"median": None, "q1": None, "q3": None, "iqr": None, "n": 0}
        return out

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["feature", "repeat", "full_auroc", "ablated_auroc", "delta", "stream", "status"])
            for f in self.features:
                for r in range(self.repeats):
                    full, abl, d = self.baseline[r], self.ablated[f][r], self.deltas[f][r]
                    err = self.failures.get((f, r)) or self.failures.get(("", r))
                    w.writerow([f, r, "" if full is None else repr(full), "" if abl is None else repr(abl),
                                "" if d is None else repr(d), self.streams[(f, r)],
                                "ok" if err is None else f"failed: {err}"])


def repeat_seed(seed, r):
    return child_seed(seed, "ablation", r)


def ablation_study(train, test, model_params, smote: SmoteParams | None = None, repeats=10, seed=0,
                   workers=1, kind="gbdt"):
    """Refit ``kind`` with ``model_params`` on SMOTE-balanced training rows,
    once with every feature and once per left-out feature, for ``repeats``
    resample seeds; record ``delta = AUROC(full) - AUROC(without i)``.

    Within a repeat every fit draws SMOTE from the same stream, so only the
    feature set differs between paired cells.  Failed cells are recorded,
    never raised.
    """
    features = tuple(train.feature_names)
    if len(features) < 2:
        raise DataError("ablation needs at least 2 features")
    if tuple(test.feature_names) != features:
        raise DataError("train and test feature sets differ")
    smote = smote or SmoteParams()

    def cell(job):
        drop, r = job
        s = repeat_seed(seed, r)
        keep = [f for f in features if f != drop]
        tr = train.select(keep)
        try:
            tr = smote_oversample(tr, smote, rng=rng_for(s, "smote"))
            model = fit_model(kind, tr, model_params)
            score = auroc(model.predict_proba(test.select(keep)), test.labels)
            return score, None, stream_fingerprint(s, "smote")
        except PancRiskError as e:
            return None, str(e), stream_fingerprint(s, "smote")

    jobs = [(d, r) for r in range(repeats) for d in ("",) + features]
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            results = dict(zip(jobs, ex.map(cell, jobs)))
    else:
        results = {j: cell(j) for j in jobs}

    baseline = tuple(results[("", r)][0] for r in range(repeats))
    ablated, deltas, failures, streams = {}, {}, {}, {}
    for (d, r), (score, err, fp) in results.items():
        streams[(d, r)] = fp
        if err is not None:
            failures[(d, r)] = err
    for f in features:
        ablated[f] = [results[(f, r)][0] for r in range(repeats)]
        deltas[f] = [None if baseline[r] is None or ablated[f][r] is None else baseline[r] - ablated[f][r]
                     for r in range(repeats)]
    return AblationResult(features, repeats, baseline, ablated, deltas, failures, streams)
