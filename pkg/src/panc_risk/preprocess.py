"""Train-fitted transforms: imputation, label encoding, min-max scaling,
and the stratified train/test split.

All ``fit_*`` functions look only at the matrix they are given, so callers
pass the training rows; ``apply_*`` functions are pure.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from ._rng import rng_for
from .cohort import CATEGORICAL, Cohort
from .errors import DataError


def _frozen(a):
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    """Dense feature matrix with an explicit observed-cell mask.

    Categorical columns hold integer codes; ``categories[name]`` is the code
    -> label vocabulary (code ``-1`` marks a category unseen at fit time).
    """

    values: np.ndarray
    mask: np.ndarray
    feature_names: tuple
    labels: np.ndarray
    row_ids: tuple
    categories: dict = field(default_factory=dict)
    synthetic: np.ndarray | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            raise DataError("values must be 2-D")
        n, p = values.shape
        mask = np.asarray(self.mask, dtype=bool)
        labels = np.asarray(self.labels, dtype=bool)
        if mask.shape != (n, p) or labels.shape != (n,) or len(self.row_ids) != n:
            raise DataError("inconsistent FeatureMatrix dimensions")
        if len(self.feature_names) != p or len(set(self.feature_names)) != p:
            raise DataError("feature names must be unique and match the column count")
        synthetic = np.zeros(n, bool) if self.synthetic is None else np.asarray(self.synthetic, bool)
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "mask", _frozen(mask))
        object.__setattr__(self, "labels", _frozen(labels))
        object.__setattr__(self, "synthetic", _frozen(synthetic))
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        object.__setattr__(self, "row_ids", tuple(self.row_ids))

    @property
    def shape(self):
        return self.values.shape

    def col(self, name):
        return self.feature_names.index(name)

    def take_rows(self, idx):
        idx = np.asarray(idx, dtype=int)
        return replace(self, values=self.values[idx], mask=self.mask[idx], labels=self.labels[idx],
                       row_ids=tuple(self.row_ids[i] for i in idx), synthetic=self.synthetic[idx])

    def select(self, names):
        names = list(names)
        missing = [n for n in names if n not in self.feature_names]
        if missing:
            raise DataError(f"unknown features: {missing}")
        cols = [self.col(n) for n in names]
        cats = {k: v for k, v in self.categories.items() if k in names}
        return replace(self, values=self.values[:, cols], mask=self.mask[:, cols],
                       feature_names=tuple(names), categories=cats)

    def drop(self, name):
        return self.select([n for n in self.feature_names if n != name])

    def to_json(self):
        vals = [[None if not ok else float(v) for v, ok in zip(row, mrow)]
                for row, mrow in zip(self.values, self.mask)]
        return json.dumps({"feature_names": list(self.feature_names), "row_ids": list(self.row_ids),
                           "labels": self.labels.astype(int).tolist(), "values": vals,
                           "synthetic": self.synthetic.astype(int).tolist(),
                           "categories": {k: list(v) for k, v in self.categories.items()}})

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        p = len(d["feature_names"])
        vals = np.array([[np.nan if v is None else v for v in row] for row in d["values"]],
                        dtype=float).reshape(-1, p)
        return cls(vals, ~np.isnan(vals), tuple(d["feature_names"]), np.array(d["labels"], bool),
                   tuple(d["row_ids"]), {k: tuple(v) for k, v in d["categories"].items()},
                   np.array(d["synthetic"], bool))

    def equals(self, other):
        return (self.feature_names == other.feature_names and self.row_ids == other.row_ids
                and np.array_equal(self.mask, other.mask) and np.array_equal(self.labels, other.labels)
                and np.array_equal(self.values, other.values, equal_nan=True)
                and np.array_equal(self.synthetic, other.synthetic))


def from_cohort(cohort: Cohort) -> FeatureMatrix:
    """Numeric columns as floats; categorical columns as codes into a
    lexicographically sorted vocabulary (re-coded later by encoding)."""
    n, names = len(cohort), list(cohort.feature_names)
    values = np.full((n, len(names)), np.nan)
    mask = np.zeros((n, len(names)), bool)
    categories = {}
    for j, name in enumerate(names):
        col = cohort.column(name)
        if name in CATEGORICAL:
            vocab = tuple(sorted({c for c in col if c is not None}))
            categories[name] = vocab
            lookup = {c: i for i, c in enumerate(vocab)}
            for i, c in enumerate(col):
                if c is not None:
                    values[i, j] = lookup[c]
                    mask[i, j] = True
        else:
            for i, v in enumerate(col):
                if v is not None:
                    values[i, j] = v
                    mask[i, j] = True
    return FeatureMatrix(values, mask, tuple(names), cohort.labels,
                         tuple(r.patient_id for r in cohort.records), categories)


# ---------------------------------------------------------------------------
# imputation


@dataclass(frozen=True)
class ImputeParams:
    numeric: dict  # column -> median
    categorical: dict  # column -> mode label

    def to_dict(self):
        return {"numeric": self.numeric, "categorical": self.categorical}


def fit_impute(train: FeatureMatrix) -> ImputeParams:
    numeric, categorical = {}, {}
    for j, name in enumerate(train.feature_names):
        obs = train.values[train.mask[:, j], j]
        if obs.size == 0:
            raise DataError(f"column {name!r} has no observed training values")
        if name in train.categories:
            vocab = train.categories[name]
            codes, counts = np.unique(obs.astype(int), return_counts=True)
            labels = [vocab[c] if c >= 0 else "" for c in codes]
            # ties go to the lexicographically smallest label
            top = max(counts)
            categorical[name] = min(lab for cnt, lab in zip(counts, labels) if cnt == top)
        else:
            numeric[name] = float(np.median(obs))
    return ImputeParams(numeric, categorical)


def apply_impute(m: FeatureMatrix, p: ImputeParams) -> FeatureMatrix:
    values = m.values.copy()
    categories = dict(m.categories)
    for j, name in enumerate(m.feature_names):
        miss = ~m.mask[:, j]
        if name in p.numeric:
            values[miss, j] = p.numeric[name]
        elif name in p.categorical:
            label = p.categorical[name]
            vocab = categories[name]
            if label not in vocab:
                vocab = vocab + (label,)
                categories[name] = vocab
            values[miss, j] = vocab.index(label)
        else:
            raise DataError(f"no imputation parameter for column {name!r}")
    return replace(m, values=values, mask=np.ones_like(m.mask), categories=categories)


# ---------------------------------------------------------------------------
# label encoding


@dataclass(frozen=True)
class EncodeParams:
    codes: dict  # column -> {label: code}

    def to_dict(self):
        return {"codes": self.codes}


def fit_encoding(train: FeatureMatrix) -> EncodeParams:
    """Codes assigned in first-appearance order over the training rows."""
    codes = {}
    for name, vocab in train.categories.items():
        j = train.col(name)
        order = {}
        for v, seen in zip(train.values[:, j], train.mask[:, j]):
            if seen and int(v) >= 0:
                order.setdefault(vocab[int(v)], len(order))
        codes[name] = order
    return EncodeParams(codes)


def apply_encoding(m: FeatureMatrix, p: EncodeParams) -> FeatureMatrix:
    values = m.values.copy()
    categories = dict(m.categories)
    for name, mapping in p.codes.items():
        j = m.col(name)
        vocab = m.categories[name]
        for i in range(values.shape[0]):
            if m.mask[i, j]:
                code = int(values[i, j])
                values[i, j] = mapping.get(vocab[code], -1) if code >= 0 else -1
        categories[name] = tuple(sorted(mapping, key=mapping.get))
    return replace(m, values=values, categories=categories)


def encode_categorical(m: FeatureMatrix) -> FeatureMatrix:
    return apply_encoding(m, fit_encoding(m))


# ---------------------------------------------------------------------------
# scaling


@dataclass(frozen=True)
class ScalerParams:
    minimum: dict
    maximum: dict

    def to_dict(self):
        return {"min": self.minimum, "max": self.maximum}


def fit_scale(train: FeatureMatrix) -> ScalerParams:
    if not train.mask.all():
        raise DataError("fit_scale needs an imputed matrix")
    lo = train.values.min(axis=0)
    hi = train.values.max(axis=0)
    names = train.feature_names
    return ScalerParams({n: float(v) for n, v in zip(names, lo)}, {n: float(v) for n, v in zip(names, hi)})


def apply_scale(m: FeatureMatrix, p: ScalerParams) -> FeatureMatrix:
    """x' = (x - min) / (max - min), clipped to [0, 1]; constant columns -> 0."""
    try:
        lo = np.array([p.minimum[n] for n in m.feature_names])
        hi = np.array([p.maximum[n] for n in m.feature_names])
    except KeyError as exc:
        raise DataError(f"no scaling parameter for column {exc.args[0]!r}") from None
    span = hi - lo
    safe = np.where(span > 0, span, 1.0)
    with np.errstate(over="ignore"):
        # far out-of-range test values overflow to +-inf and clip to 0 or 1
        out = np.where(span > 0, (m.values - lo) / safe, 0.0)
    return replace(m, values=np.clip(out, 0.0, 1.0))


@dataclass(frozen=True)
class TransformParams:
    impute: ImputeParams
    encode: EncodeParams
    scale: ScalerParams

    def apply(self, m):
        return apply_scale(apply_encoding(apply_impute(m, self.impute), self.encode), self.scale)

    def to_json(self):
        doc = {"impute": self.impute.to_dict(), "encode": self.encode.to_dict(), "scale": self.scale.to_dict()}
        return json.dumps(doc, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls(ImputeParams(d["impute"]["numeric"], d["impute"]["categorical"]),
                   EncodeParams(d["encode"]["codes"]),
                   ScalerParams(d["scale"]["min"], d["scale"]["max"]))


def fit_transform(train: FeatureMatrix) -> TransformParams:
    imp = fit_impute(train)
    imputed = apply_impute(train, imp)
    enc = fit_encoding(imputed)
    return TransformParams(imp, enc, fit_scale(apply_encoding(imputed, enc)))


# ---------------------------------------------------------------------------
# splitting


@dataclass(frozen=True)
class SplitIndex:
    train_rows: tuple
    test_rows: tuple
    seed: int

    def to_dict(self):
        return {"train_rows": list(self.train_rows), "test_rows": list(self.test_rows), "seed": self.seed}


def _class_quotas(counts, fraction):
    """Largest-remainder rounding: the quotas sum to round(n * fraction) and
    each lies within 1 of count * fraction.  Ties go to the smaller class."""
    exact = np.asarray(counts, float) * fraction
    quota = np.floor(exact).astype(int)
    short = int(round(sum(counts) * fraction)) - int(quota.sum())
    order = sorted(range(len(counts)), key=lambda c: (-(exact[c] - quota[c]), counts[c], c))
    for c in order[:max(short, 0)]:
        quota[c] += 1
    # keep at least one row of each class on both sides
    return np.clip(quota, 1, np.asarray(counts) - 1)


def stratified_split(m, test_fraction, seed) -> SplitIndex:
    """Per-class shuffle; each class sends its rounded share of
    round(n * fraction) test rows."""
    labels = m.labels if isinstance(m, FeatureMatrix) else np.asarray(m, dtype=bool)
    if not 0.0 < test_fraction < 1.0:
        raise DataError("test_fraction must lie in (0, 1)")
    groups = [np.flatnonzero(labels == cls) for cls in (False, True)]
    for cls, idx in enumerate(groups):
        if idx.size < 2:
            raise DataError(f"class {cls} has {idx.size} rows; at least 2 are needed to split")
    quotas = _class_quotas([g.size for g in groups], test_fraction)
    test = []
    for cls, (idx, k) in enumerate(zip(groups, quotas)):
        rng = rng_for(seed, "split", cls)
        idx = idx[rng.permutation(idx.size)]
        test.extend(idx[:k].tolist())
    test_set = set(test)
    train = [i for i in range(labels.size) if i not in test_set]
    return SplitIndex(tuple(train), tuple(sorted(test)), int(seed))
