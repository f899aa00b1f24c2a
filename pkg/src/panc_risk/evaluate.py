"""Threshold metrics, AUROC, ROC/calibration curves and percentile
bootstrap intervals."""
from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ._rng import rng_for
from .errors import DataError

METRICS = ("auroc", "accuracy", "f1", "sensitivity", "specificity", "ppv", "npv")


def _check(scores, labels):
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=bool)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise DataError(f"scores and labels must be 1-D of equal length, got {scores.shape} and {labels.shape}")
    return scores, labels


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise DataError("confusion counts must be non-negative")

    @property
    def n(self):
        return self.tp + self.fp + self.tn + self.fn


def confusion_at_threshold(scores, labels, threshold):
    """Counts when predicting positive iff ``score >= threshold``."""
    scores, labels = _check(scores, labels)
    pred = scores >= threshold
    return ConfusionCounts(tp=int(np.sum(pred & labels)), fp=int(np.sum(pred & ~labels)),
                           tn=int(np.sum(~pred & ~labels)), fn=int(np.sum(~pred & labels)))


def _ratio(a, b):
    return None if b == 0 else a / b


def metrics_from_confusion(c: ConfusionCounts):
    """Threshold metrics; a 0/0 ratio comes back as ``None``."""
    sens = _ratio(c.tp, c.tp + c.fn)
    ppv = _ratio(c.tp, c.tp + c.fp)
    if sens is None or ppv is None or c.tp == 0:
        # with tp = 0 the harmonic mean is 0/0
        f1 = None
    else:
        f1 = _ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn)
    return {
        "accuracy": _ratio(c.tp + c.tn, c.n),
        "f1": f1,
        "sensitivity": sens,
        "specificity": _ratio(c.tn, c.tn + c.fp),
        "ppv": ppv,
        "npv": _ratio(c.tn, c.tn + c.fn),
    }


def _average_ranks2(scores):
    """Twice the 1-based average ranks, as exact integers."""
    order = np.argsort(scores, kind="mergesort")
    s = scores[order]
    n = s.size
    starts = np.flatnonzero(np.r_[True, s[1:] != s[:-1]])
    ends = np.r_[starts[1:], n]
    # a tie block occupying sorted positions start..end-1 shares rank (start + end + 1) / 2
    r2 = np.repeat(starts + ends + 1, ends - starts)
    out = np.empty(n, dtype=np.int64)
    out[order] = r2
    return out


def auroc(scores, labels):
    """Mann-Whitney AUROC with ties counted as one half."""
    scores, labels = _check(scores, labels)
    n1 = int(labels.sum())
    n0 = labels.size - n1
    if n1 == 0 or n0 == 0:
        raise DataError("AUROC needs both classes")
    u2 = int(_average_ranks2(scores)[labels].sum()) - n1 * (n1 + 1)
    return (u2 / 2) / (n1 * n0)


def auroc_pairs(scores, labels):
    """Exhaustive pair count; quadratic, for checking."""
    scores, labels = _check(scores, labels)
    pos, neg = scores[labels], scores[~labels]
    if pos.size == 0 or neg.size == 0:
        raise DataError("AUROC needs both classes")
    d = pos[:, None] - neg[None, :]
    return (np.sum(d > 0) + 0.5 * np.sum(d == 0)) / (pos.size * neg.size)


@dataclass(frozen=True)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray  # +inf for the (0, 0) endpoint

    def area(self):
        return float(np.sum(np.diff(self.fpr) * (self.tpr[1:] + self.tpr[:-1]) / 2.0))


def roc_points(scores, labels):
    scores, labels = _check(scores, labels)
    n1 = int(labels.sum())
    n0 = labels.size - n1
    if n1 == 0 or n0 == 0:
        raise DataError("ROC needs both classes")
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], labels[order]
    last = np.r_[s[1:] != s[:-1], True]  # final row of each tie block
    tp = np.cumsum(y)[last]
    fp = np.cumsum(~y)[last]
    return RocCurve(np.r_[0.0, fp / n0], np.r_[0.0, tp / n1], np.r_[np.inf, s[last]])


@dataclass(frozen=True)
class CalibrationCurve:
    edges: np.ndarray  # 11 edges of 10 equal-width bins
    mean_predicted: list  # None for empty bins
    observed: list
    counts: np.ndarray


def calibration(scores, labels, n_bins=10):
    scores, labels = _check(scores, labels)
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    b = np.clip(np.floor(scores * n_bins).astype(int), 0, n_bins - 1)
    counts = np.bincount(b, minlength=n_bins)
    sums = np.bincount(b, weights=scores, minlength=n_bins)
    pos = np.bincount(b, weights=labels.astype(float), minlength=n_bins)
    mean_pred = [None if c == 0 else float(s / c) for s, c in zip(sums, counts)]
    observed = [None if c == 0 else float(q / c) for q, c in zip(pos, counts)]
    return CalibrationCurve(edges, mean_pred, observed, counts)


def pick_threshold(scores, labels, policy="fixed"):
    """``fixed`` gives 0.5; ``youden`` maximises sensitivity + specificity - 1
    over the distinct scores (ties go to the lower threshold)."""
    if policy == "fixed":
        return 0.5
    if policy != "youden":
        raise DataError(f"unknown threshold policy {policy!r}")
    scores, labels = _check(scores, labels)
    n1 = int(labels.sum())
    n0 = labels.size - n1
    if n1 == 0 or n0 == 0:
        raise DataError("Youden threshold needs both classes")
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], labels[order]
    last = np.r_[s[1:] != s[:-1], True]
    tp = np.cumsum(y, dtype=np.int64)[last]
    fp = np.cumsum(~y, dtype=np.int64)[last]
    # J scaled by n0 * n1 stays an exact integer, so ties compare exactly
    j = tp * n0 - fp * n1
    # thresholds descend, so the last maximiser is the lowest threshold
    best = np.flatnonzero(j == j.max())[-1]
    return float(s[last][best])


def all_metrics(scores, labels, threshold):
    out = {"auroc": auroc(scores, labels)}
    out.update(metrics_from_confusion(confusion_at_threshold(scores, labels, threshold)))
    return out


@dataclass(frozen=True)
class BootstrapResult:
    point: float | None
    lo: float | None
    hi: float | None
    redraws: int
    undefined: int  # replicates where the metric was 0/0


def _percentiles(values):
    if values.size == 0:
        return None, None
    lo, hi = np.percentile(values, [2.5, 97.5])
    return float(lo), float(hi)


def _replicate_indices(seed, r, labels):
    rng = rng_for(seed, "bootstrap", r)
    n = labels.size
    redraws = 0
    while True:
        idx = rng.integers(0, n, size=n)
        k = int(labels[idx].sum())
        if 0 < k < n:
            return idx, redraws
        redraws += 1


def bootstrap_metrics(scores, labels, threshold=0.5, B=2000, seed=0, metrics=METRICS, workers=1):
    """Percentile intervals for several metrics from one set of B paired
    resamples.  Replicate r draws from its own stream (seed, r), and
    single-class resamples are redrawn from that stream."""
    scores, labels = _check(scores, labels)
    if labels.size < 2 or labels.all() or not labels.any():
        raise DataError("bootstrap needs n >= 2 and both classes")
    metrics = tuple(metrics)

    def run(r):
        idx, redraws = _replicate_indices(seed, r, labels)
        s, y = scores[idx], labels[idx]
        vals = {}
        if "auroc" in metrics:
            vals["auroc"] = auroc(s, y)
        if any(m != "auroc" for m in metrics):
            vals.update(metrics_from_confusion(confusion_at_threshold(s, y, threshold)))
        return [vals[m] for m in metrics], redraws

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            rows = list(ex.map(run, range(B)))
    else:
        rows = [run(r) for r in range(B)]
    redraws = sum(r[1] for r in rows)
    point = all_metrics(scores, labels, threshold)
    out = {}
    for j, m in enumerate(metrics):
        vals = np.array([r[0][j] for r in rows if r[0][j] is not None], dtype=float)
        lo, hi = _percentiles(vals)
        out[m] = BootstrapResult(point[m], lo, hi, redraws, B - vals.size)
    return out


def bootstrap_ci(metric, scores, labels, B=2000, seed=0, threshold=0.5, workers=1):
    """(point, lo, hi) for one named metric."""
    if metric not in METRICS:
        raise DataError(f"unknown metric {metric!r}")
    r = bootstrap_metrics(scores, labels, threshold, B, seed, (metric,), workers)[metric]
    return r.point, r.lo, r.hi


@dataclass(frozen=True)
class MetricsReport:
    metrics: dict  # name -> point value or None
    ci: dict  # name -> (lo, hi)
    threshold: float
    n: int
    n_positive: int
    bootstrap_replicates: int
    bootstrap_redraws: int
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "n": self.n,
            "n_positive": self.n_positive,
            "threshold": self.threshold,
            "metrics": {m: self.metrics[m] for m in METRICS},
            "ci95": {m: list(self.ci[m]) for m in METRICS},
            "bootstrap": {"replicates": self.bootstrap_replicates, "redraws": self.bootstrap_redraws,
                          "interval": "percentile"},
            **self.extra,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=False)

    @classmethod
    def from_dict(cls, d):
        known = {"n", "n_positive", "threshold", "metrics", "ci95", "bootstrap"}
        return cls(d["metrics"], {m: tuple(v) for m, v in d["ci95"].items()}, d["threshold"], d["n"],
                   d["n_positive"], d["bootstrap"]["replicates"], d["bootstrap"]["redraws"],
                   {k: v for k, v in d.items() if k not in known})


def metrics_report(scores, labels, threshold=0.5, B=2000, seed=0, workers=1, extra=None):
    scores, labels = _check(scores, labels)
    boot = bootstrap_metrics(scores, labels, threshold, B, seed, METRICS, workers)
    return MetricsReport(
        metrics={m: boot[m].point for m in METRICS},
        ci={m: (boot[m].lo, boot[m].hi) for m in METRICS},
        threshold=float(threshold), n=int(labels.size), n_positive=int(labels.sum()),
        bootstrap_replicates=int(B), bootstrap_redraws=boot["auroc"].redraws, extra=dict(extra or {}),
    )


def write_roc_csv(curve: RocCurve, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["threshold", "fpr", "tpr"])
        for t, f, s in zip(curve.thresholds, curve.fpr, curve.tpr):
            w.writerow(["inf" if np.isinf(t) else repr(float(t)), repr(float(f)), repr(float(s))])


def write_calibration_csv(curve: CalibrationCurve, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_lo", "bin_hi", "mean_predicted", "observed_fraction", "count"])
        for i, c in enumerate(curve.counts):
            mp, ob = curve.mean_predicted[i], curve.observed[i]
            w.writerow([repr(float(curve.edges[i])), repr(float(curve.edges[i + 1])),
                        "" if mp is None else repr(mp), "" if ob is None else repr(ob), int(c)])
