"""Run configuration: one JSON document validated against a fixed schema.

Unknown keys are rejected everywhere so a typo can never silently fall
back to a default.
"""
from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

import jsonschema

from .errors import ConfigError

_NUM = {"type": "number"}
_INT = {"type": "integer"}
_STRLIST = {"type": "array", "items": {"type": "string"}}


def _obj(props, required=()):
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


_MODEL = _obj({
    "kind": {"enum": ["gbdt", "random_forest", "logreg", "knn", "gaussian_nb", "mlp"]},
    "fixed": {"type": "object"},
    "grid": {"type": "object", "additionalProperties": {"type": "array", "minItems": 1}},
}, required=("kind",))

SCHEMA = _obj({
    "seed": {"type": "integer", "minimum": 0},
    "input": _obj({
        "static_csv": {"type": "string"},
        "events_csv": {"type": ["string", "null"]},
        "temporal_variables": {"type": ["array", "null"], "items": {"type": "string"}},
    }, required=("static_csv",)),
    "synthetic": _obj({
        "n": {"type": "integer", "minimum": 2},
        "prevalence": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "correlation_strength": {"type": "number", "minimum": 0, "maximum": 1},
        "noise_feature_count": {"type": "integer", "minimum": 0},
    }),
    "split": _obj({"test_fraction": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1}}),
    "folds": {"type": "integer", "minimum": 2},
    "smote": _obj({
        "enabled": {"type": "boolean"},
        "k_neighbors": {"type": "integer", "minimum": 1},
        "target_ratio": {"type": "number", "exclusiveMinimum": 0},
    }),
    "selection": _obj({
        "rfecv": _obj({
            "n_estimators": {"type": "integer", "minimum": 1},
            "max_depth": {"type": ["integer", "null"], "minimum": 0},
            "min_samples_leaf": {"type": "integer", "minimum": 1},
            "max_features": {"type": ["string", "integer", "number"]},
        }),
        "lasso_grid": {"type": ["array", "null"], "items": {"type": "number", "minimum": 0}},
        "lasso_grid_size": {"type": "integer", "minimum": 1},
        "lasso_grid_ratio": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "forced_in": _STRLIST,
        "forced_out": _STRLIST,
    }),
    "models": {"type": "object", "minProperties": 1, "additionalProperties": _MODEL},
    "primary_model": {"type": "string"},
    "threshold_policy": {"enum": ["fixed", "youden"]},
    "bootstrap": _obj({"replicates": {"type": "integer", "minimum": 1}}),
    "ablation": _obj({"repeats": {"type": "integer", "minimum": 0}}),
    "plots": {"type": "boolean"},
    "output": {"type": "string"},
}, required=("seed",))

DEFAULTS = {
    "split": {"test_fraction": 0.3},
    "folds": 5,
    "smote": {"enabled": True, "k_neighbors": 5, "target_ratio": 1.0},
    "selection": {
        "rfecv": {"n_estimators": 50, "max_depth": None, "min_samples_leaf": 5, "max_features": "sqrt"},
        "lasso_grid": None,
        "lasso_grid_size": 50,
        "lasso_grid_ratio": 1e-4,
        "forced_in": [],
        "forced_out": [],
    },
    "models": {
        "gbdt_depthwise": {
            "kind": "gbdt",
            "fixed": {"n_rounds": 100, "eta": 0.1, "growth": "depthwise", "reg_lambda": 1.0},
            "grid": {"max_depth": [3, 4], "min_child_weight": [1.0, 5.0]},
        },
        "gbdt_leafwise": {
            "kind": "gbdt",
            "fixed": {"n_rounds": 100, "eta": 0.1, "growth": "leafwise", "max_depth": 8, "reg_lambda": 1.0},
            "grid": {"max_leaves": [8, 15], "min_child_weight": [1.0, 5.0]},
        },
        "random_forest": {
            "kind": "random_forest",
            "fixed": {"n_estimators": 100, "max_features": "sqrt"},
            "grid": {"max_depth": [None, 8], "min_samples_leaf": [1, 5]},
        },
        "logreg": {"kind": "logreg", "fixed": {}, "grid": {"C": [0.1, 1.0, 10.0], "penalty": ["l1", "l2"]}},
        "knn": {"kind": "knn", "fixed": {}, "grid": {"k": [5, 15, 31], "metric": ["euclidean", "manhattan"],
                                                      "weights": ["uniform", "distance"]}},
        "gaussian_nb": {"kind": "gaussian_nb", "fixed": {}, "grid": {"priors": [None, "balanced"]}},
        "mlp": {"kind": "mlp", "fixed": {"epochs": 50, "batch_size": 64},
                "grid": {"hidden_units": [8, 16], "learning_rate": [0.001, 0.01]}},
    },
    "primary_model": "gbdt_depthwise",
    "threshold_policy": "fixed",
    "bootstrap": {"replicates": 2000},
    "ablation": {"repeats": 10},
    "plots": True,
}


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "models":
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def validate(doc):
    try:
        jsonschema.validate(doc, SCHEMA)
    except jsonschema.ValidationError as e:
        where = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigError(f"config error at {where}: {e.message}") from None
    if ("input" in doc) == ("synthetic" in doc):
        raise ConfigError("config must contain exactly one of 'input' and 'synthetic'")


def resolve(doc, base_dir=None):
    """Validate a raw config and fill defaults.  Relative input paths are
    resolved against ``base_dir`` (the config file's directory)."""
    validate(doc)
    cfg = _merge(DEFAULTS, doc)
    if "input" in cfg and base_dir is not None:
        for key in ("static_csv", "events_csv"):
            v = cfg["input"].get(key)
            if v is not None and not Path(v).is_absolute():
                cfg["input"][key] = str(Path(base_dir) / v)
    if cfg["primary_model"] not in cfg["models"]:
        raise ConfigError(f"primary_model {cfg['primary_model']!r} is not among the configured models")
    if cfg["models"][cfg["primary_model"]]["kind"] != "gbdt":
        raise ConfigError("primary_model must be a gbdt model (it drives SHAP and ablation)")
    return cfg


def load(path):
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from None
    return doc


def canonical(cfg):
    """Config fields that influence results, as canonical JSON."""
    keep = {k: v for k, v in cfg.items() if k != "output"}
    return json.dumps(keep, sort_keys=True, separators=(",", ":"))


def config_hash(cfg):
    return hashlib.sha256(canonical(cfg).encode("utf-8")).hexdigest()
