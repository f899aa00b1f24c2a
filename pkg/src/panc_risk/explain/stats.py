"""Two-sample t-tests (pooled and Welch), Pearson chi-square, and the
cohort comparison tables built from them."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from ..errors import DataError
from .specfun import chi2_sf, t_sf2

ALPHA = 0.05


@dataclass(frozen=True)
class StatTestResult:
    feature: str
    mean1: float | None
    mean2: float | None
    sd1: float | None
    sd2: float | None
    n1: int
    n2: int
    statistic: float
    df: float
    p_value: float
    kind: str


def t_test_from_stats(mean1, sd1, n1, mean2, sd2, n2, variant="student", feature=""):
    """t statistic for ``mean1 - mean2`` from summary statistics.

    ``student`` pools the variances with ``n1 + n2 - 2`` degrees of
    freedom; ``welch`` keeps them apart with Welch-Satterthwaite df.
    """
    if n1 < 2 or n2 < 2:
        raise DataError("t-test needs at least 2 observations per group")
    if sd1 < 0 or sd2 < 0:
        raise DataError("standard deviations must be non-negative")
    v1, v2 = sd1 * sd1, sd2 * sd2
    if v1 == 0 and v2 == 0:
        raise DataError("t-test needs non-zero variance in at least one group")
    if variant == "student":
        df = n1 + n2 - 2
        sp2 = ((n1 - 1) * v1 + (n2 - 1) * v2) / df
        se = math.sqrt(sp2 * (1.0 / n1 + 1.0 / n2))
    elif variant == "welch":
        a, b = v1 / n1, v2 / n2
        se = math.sqrt(a + b)
        df = (a + b) ** 2 / (a * a / (n1 - 1) + b * b / (n2 - 1))
    else:
        raise DataError(f"unknown t-test variant {variant!r}")
    t = (mean1 - mean2) / se
    return StatTestResult(feature, float(mean1), float(mean2), float(sd1), float(sd2), int(n1), int(n2),
                          float(t), float(df), float(t_sf2(t, df)), variant)


def t_test(group1, group2, variant="student", feature=""):
    g1 = np.asarray(group1, dtype=float)
    g2 = np.asarray(group2, dtype=float)
    if g1.size < 2 or g2.size < 2:
        raise DataError("t-test needs at least 2 observations per group")
    return t_test_from_stats(g1.mean(), g1.std(ddof=1), g1.size, g2.mean(), g2.std(ddof=1), g2.size,
                             variant, feature)


def chi_square(table, feature=""):
    """Pearson chi-square on a 2 x k table of counts (rows = groups)."""
    obs = np.asarray(table, dtype=float)
    if obs.ndim != 2 or obs.shape[0] != 2 or obs.shape[1] < 2:
        raise DataError(f"chi-square needs a 2 x k table with k >= 2, got shape {obs.shape}")
    if np.any(obs < 0):
        raise DataError("counts must be non-negative")
    total = obs.sum()
    expected = np.outer(obs.sum(axis=1), obs.sum(axis=0)) / (total if total > 0 else 1.0)
    if np.any(expected <= 0):
        raise DataError("chi-square has a zero expected count; drop empty categories first")
    stat = float(np.sum((obs - expected) ** 2 / expected))
    df = obs.shape[1] - 1
    n1, n2 = obs.sum(axis=1)
    return StatTestResult(feature, None, None, None, None, int(n1), int(n2), stat, float(df),
                          float(chi2_sf(stat, df)), "chi_square")


# ---------------------------------------------------------------------------
# comparison tables


@dataclass(frozen=True)
class ComparisonRow:
    feature: str
    student: StatTestResult | None
    welch: StatTestResult | None
    chi: StatTestResult | None
    summary1: str
    summary2: str

    @property
    def p_value(self):
        return (self.student or self.chi).p_value

    @property
    def disagree(self):
        if self.student is None:
            return False
        return (self.student.p_value < ALPHA) != (self.welch.p_value < ALPHA)


def compare_groups(matrix, in_group2, group_names=("group1", "group2")):
    """Per-feature comparison of two row groups of a raw FeatureMatrix.

    Numeric features get both t-test variants on observed cells;
    categorical features (those with a vocabulary) get chi-square over the
    categories seen in either group.  Rows come back sorted by p-value,
    largest first.
    """
    in_group2 = np.asarray(in_group2, bool)
    rows = []
    for j, name in enumerate(matrix.feature_names):
        obs = matrix.mask[:, j]
        a = matrix.values[obs & ~in_group2, j]
        b = matrix.values[obs & in_group2, j]
        if name in matrix.categories:
            vocab = matrix.categories[name]
            codes = np.arange(len(vocab))
            counts = np.array([[np.sum(a == c) for c in codes], [np.sum(b == c) for c in codes]])
            keep = counts.sum(axis=0) > 0
            if keep.sum() < 2:
                continue
            res = chi_square(counts[:, keep], feature=name)
            fmt = lambda row: "; ".join(f"{vocab[c]} {int(k)} ({100.0 * k / max(row.sum(), 1):.1f}%)"
                                        for c, k in zip(codes[keep], row[keep]))
            rows.append(ComparisonRow(name, None, None, res, fmt(counts[0]), fmt(counts[1])))
        else:
            if a.size < 2 or b.size < 2 or (np.ptp(a) == 0 and np.ptp(b) == 0):
                continue
            st = t_test(a, b, "student", name)
            we = t_test(a, b, "welch", name)
            rows.append(ComparisonRow(name, st, we, None, f"{st.mean1:.2f} ({st.sd1:.2f})",
                                      f"{st.mean2:.2f} ({st.sd2:.2f})"))
    # stable sort keeps column order among equal p-values
    rows.sort(key=lambda r: -r.p_value)
    return rows


def write_comparison_csv(rows, path, group_names=("group1", "group2")):
    g1, g2 = group_names
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["feature", f"{g1}_mean_sd", f"{g2}_mean_sd", "test", "statistic", "df", "p_value",
                    "welch_statistic", "welch_df", "welch_p_value", "student_welch_disagree"])
        for r in rows:
            main = r.student or r.chi
            we = r.welch
            w.writerow([r.feature, r.summary1, r.summary2, main.kind, repr(main.statistic), repr(main.df),
                        repr(main.p_value), "" if we is None else repr(we.statistic),
                        "" if we is None else repr(we.df), "" if we is None else repr(we.p_value),
                        int(r.disagree)])
