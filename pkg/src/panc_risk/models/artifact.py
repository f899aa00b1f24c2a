"""Uniform wrapper over every model family with a versioned JSON form."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, DataError
from .baselines import (GaussianNBModel, KnnModel, LogisticModel, MlpModel, MlpParams, train_gaussian_nb,
                        train_knn, train_logreg, train_mlp)
from .forest import ForestParams, train_random_forest
from .gbdt import GbdtParams, train_gbdt
from .trees import TreeEnsemble

FORMAT = "panc_risk.model"
VERSION = 1

KINDS = ("gbdt", "random_forest", "logreg", "knn", "gaussian_nb", "mlp")

_LOGREG_KEYS = {"C", "penalty", "max_iter", "tol"}
_KNN_KEYS = {"k", "metric", "weights"}
_NB_KEYS = {"priors"}


def _params_obj(kind, params):
    params = dict(params)
    try:
        if kind == "gbdt":
            return GbdtParams(**params)
        if kind == "random_forest":
            return ForestParams(**params)
        if kind == "mlp":
            return MlpParams(**params)
    except TypeError as e:
        raise ConfigError(f"bad {kind} parameters: {e}") from None
    allowed = {"logreg": _LOGREG_KEYS, "knn": _KNN_KEYS, "gaussian_nb": _NB_KEYS}.get(kind)
    if allowed is None:
        raise ConfigError(f"unknown model kind {kind!r}; expected one of {KINDS}")
    # seeds are accepted everywhere so callers can treat kinds uniformly
    extra = set(params) - allowed - {"seed"}
    if extra:
        raise ConfigError(f"bad {kind} parameters: unexpected {sorted(extra)}")
    params.pop("seed", None)
    return params


_LOADERS = {"logreg": LogisticModel, "knn": KnnModel, "gaussian_nb": GaussianNBModel, "mlp": MlpModel}


@dataclass(frozen=True, eq=False)
class ModelArtifact:
    kind: str
    params: dict
    state: object
    feature_names: tuple

    def _matrix(self, rows):
        names = getattr(rows, "feature_names", None)
        if names is None:
            X = np.asarray(rows, dtype=float)
            if X.ndim != 2 or X.shape[1] != len(self.feature_names):
                raise DataError(f"expected {len(self.feature_names)} feature columns, got shape {X.shape}")
            return X
        names = tuple(names)
        if names != self.feature_names:
            missing = [n for n in self.feature_names if n not in names]
            extra = [n for n in names if n not in self.feature_names]
            if missing or extra:
                raise DataError(f"feature schema mismatch: missing {missing}, extra {extra}")
            rows = rows.select(self.feature_names)
        if not rows.mask.all():
            raise DataError("prediction rows must be fully imputed")
        return rows.values

    def predict_proba(self, rows):
        p = self.state.predict_proba(self._matrix(rows))
        return np.clip(p, 0.0, 1.0)

    def margin(self, rows):
        if not isinstance(self.state, TreeEnsemble):
            raise DataError(f"{self.kind} has no tree margin")
        return self.state.margin(self._matrix(rows))

    def to_dict(self):
        return {"format": FORMAT, "version": VERSION, "kind": self.kind, "params": self.params,
                "feature_names": list(self.feature_names), "state": self.state.to_dict()}

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d):
        if d.get("format") != FORMAT:
            raise DataError("not a model document")
        if d.get("version") != VERSION:
            raise DataError(f"unsupported model version {d.get('version')!r}")
        kind = d["kind"]
        if kind in ("gbdt", "random_forest"):
            state = TreeEnsemble.from_dict(d["state"])
        elif kind in _LOADERS:
            state = _LOADERS[kind].from_dict(d["state"])
        else:
            raise DataError(f"unknown model kind {kind!r}")
        return cls(kind, d["params"], state, tuple(d["feature_names"]))

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def fit_model(kind, train, params=None) -> ModelArtifact:
    """Fit ``kind`` on a fully imputed FeatureMatrix."""
    params = dict(params or {})
    obj = _params_obj(kind, params)
    if not train.mask.all():
        raise DataError("training rows must be fully imputed")
    X, y = train.values, train.labels
    if np.unique(y).size < 2:
        raise DataError(f"{kind} needs both classes in the training labels")
    if kind == "gbdt":
        state = train_gbdt(X, y, obj)
    elif kind == "random_forest":
        state = train_random_forest(X, y, obj)
    elif kind == "mlp":
        state = train_mlp(X, y, obj)
    elif kind == "logreg":
        state = train_logreg(X, y, **obj)
    elif kind == "knn":
        state = train_knn(X, y, **obj)
    else:
        state = train_gaussian_nb(X, y, **obj)
    return ModelArtifact(kind, params, state, tuple(train.feature_names))
