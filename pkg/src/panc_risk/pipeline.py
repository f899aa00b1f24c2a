"""End-to-end orchestration.  Each stage reads the files written by the
stages before it from one output directory, so stages can be run one at
a time or chained by :func:`run`.

Output files (relative to the output directory)::

    cohort_raw.csv, events_raw.csv      synth
    cohort.csv, events.csv, exclusions.json, split.json, transform.json,
    train_matrix.json, test_matrix.json, stats_split.csv,
    stats_outcome.csv                   ingest
    folds.json, selection.json, rfecv_curve.csv        select
    models/<name>.json, cv_<name>.csv                  train
    metrics_<name>.json, roc_<name>.csv, calibration_<name>.csv,
    metrics_summary.csv                                evaluate
    shap_summary.csv, shap_meta.json                   explain
    ablation.csv                                       ablate
    plots/*.svg, manifest.json
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import platform
import shutil
import tempfile
from importlib import metadata
from pathlib import Path

import numpy as np

from . import config as config_mod
from ._rng import child_seed, rng_for
from .cohort import (apply_exclusions, export_cohort, export_events, generate_synthetic, ingest, table3_spec,
                     with_temporal_features)
from .errors import ConfigError, DataError, PancRiskError
from .evaluate import (calibration, metrics_report, pick_threshold, roc_points, write_calibration_csv,
                       write_roc_csv)
from .explain.ablation import ablation_study
from .explain.shap import shap_summary_export, tree_shap
from .explain.stats import compare_groups, write_comparison_csv
from .models.artifact import ModelArtifact, fit_model
from .models.search import grid_search, smote_fold_trains
from .preprocess import FeatureMatrix, fit_transform, stratified_split
from .preprocess import from_cohort as cohort_matrix
from .resample import FoldPlan, SmoteParams, make_folds, smote_oversample
from .select import RfecvConfig, SelectionReport, default_lambda_grid, hybrid_select, lasso_select, rfecv

log = logging.getLogger("panc_risk")

STAGES = ("ingest", "select", "train", "evaluate", "explain", "ablate")


class StageError(PancRiskError):
    """Wraps a failure with the name of the stage it happened in."""

    def __init__(self, stage, err):
        super().__init__(f"stage {stage}: {err}")
        self.stage = stage
        self.exit_code = getattr(err, "exit_code", 1)


# ---------------------------------------------------------------------------
# small IO helpers


def _write_json(path, obj):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(obj, indent=2) + "\n", encoding="utf-8")


def _read_text(out, name):
    path = Path(out) / name
    if not path.exists():
        raise DataError(f"missing stage input {name} (run the earlier stage first)")
    return path.read_text(encoding="utf-8")


def _read_json(out, name):
    return json.loads(_read_text(out, name))


def _matrix(out, name):
    return FeatureMatrix.from_json(_read_text(out, name))


def _smote_params(cfg):
    s = cfg["smote"]
    if not s["enabled"]:
        return None
    return SmoteParams(k_neighbors=s["k_neighbors"], target_ratio=s["target_ratio"],
                       seed=child_seed(cfg["seed"], "smote"))


def _plots(cfg, out):
    if not cfg["plots"]:
        return None
    d = Path(out) / "plots"
    d.mkdir(parents=True, exist_ok=True)
    return d


# ---------------------------------------------------------------------------
# stages


def synthetic_cohort(cfg):
    syn = cfg.get("synthetic")
    if syn is None:
        raise ConfigError("this command needs a 'synthetic' section in the config")
    spec = table3_spec(**syn)
    return generate_synthetic(spec, child_seed(cfg["seed"], "cohort"))


def stage_synth(cfg, out):
    cohort = synthetic_cohort(cfg)
    export_cohort(cohort, Path(out) / "cohort_raw.csv")
    export_events(cohort, Path(out) / "events_raw.csv")
    return cohort


def load_cohort(cfg, from_cohort=None):
    if from_cohort is not None:
        path = Path(from_cohort)
        events = path.with_name(path.name.replace("cohort", "events", 1))
        return ingest(path, events if events.exists() and events != path else None)
    if "input" in cfg:
        inp = cfg["input"]
        return ingest(inp["static_csv"], inp.get("events_csv"))
    return synthetic_cohort(cfg)


def stage_ingest(cfg, out, from_cohort=None):
    out = Path(out)
    cohort = load_cohort(cfg, from_cohort)
    variables = cfg.get("input", {}).get("temporal_variables")
    cohort = with_temporal_features(cohort, variables)
    cohort, excl = apply_exclusions(cohort)
    _write_json(out / "exclusions.json", dict(excl))
    export_cohort(cohort, out / "cohort.csv")
    export_events(cohort, out / "events.csv")
    log.info("cohort: %d patients after exclusions %s", len(cohort), dict(excl))

    raw = cohort_matrix(cohort)
    split = stratified_split(raw, cfg["split"]["test_fraction"], cfg["seed"])
    _write_json(out / "split.json", split.to_dict())
    is_test = np.zeros(raw.shape[0], bool)
    is_test[list(split.test_rows)] = True
    write_comparison_csv(compare_groups(raw, is_test), out / "stats_split.csv", ("train", "test"))
    write_comparison_csv(compare_groups(raw, raw.labels), out / "stats_outcome.csv",
                         ("non_readmitted", "readmitted"))

    train_raw, test_raw = raw.take_rows(split.train_rows), raw.take_rows(split.test_rows)
    tp = fit_transform(train_raw)
    (out / "transform.json").write_text(tp.to_json() + "\n", encoding="utf-8")
    (out / "train_matrix.json").write_text(tp.apply(train_raw).to_json() + "\n", encoding="utf-8")
    (out / "test_matrix.json").write_text(tp.apply(test_raw).to_json() + "\n", encoding="utf-8")


def stage_select(cfg, out, workers=1):
    out = Path(out)
    train = _matrix(out, "train_matrix.json")
    folds = make_folds(train.labels, cfg["folds"], cfg["seed"])
    (out / "folds.json").write_text(folds.to_json() + "\n", encoding="utf-8")
    sel = cfg["selection"]
    rcfg = RfecvConfig(seed=child_seed(cfg["seed"], "rfecv"), **sel["rfecv"])
    r_set, curve, eliminated = rfecv(train, folds, rcfg, workers)
    grid = sel["lasso_grid"]
    if grid is None:
        grid = default_lambda_grid(train.values, train.labels, sel["lasso_grid_size"], sel["lasso_grid_ratio"])
    l_set, info = lasso_select(train, folds, grid, workers)
    report = hybrid_select(r_set, l_set, sel["forced_in"], sel["forced_out"], schema=train.feature_names,
                           rfecv_curve=curve, lasso=info, rfecv_eliminated=eliminated)
    (out / "selection.json").write_text(report.to_json() + "\n", encoding="utf-8")
    report.write_curve_csv(out / "rfecv_curve.csv")
    plots = _plots(cfg, out)
    if plots is not None:
        from .plotting import plot_rfecv

        plot_rfecv(curve, plots / "rfecv_curve.svg", chosen=len(r_set))
    log.info("selection: %d features (rfecv %d, lasso %d)", len(report.final_set), len(r_set), len(l_set))
    return report


def _selected(out):
    report = SelectionReport.from_dict(_read_json(out, "selection.json"))
    return list(report.final_set)


def stage_train(cfg, out, workers=1):
    out = Path(out)
    names = _selected(out)
    train = _matrix(out, "train_matrix.json").select(names)
    folds = FoldPlan.from_json(_read_text(out, "folds.json"))
    smote = _smote_params(cfg)
    fold_trains = smote_fold_trains(train, folds, smote, workers)
    if smote is not None:
        full = smote_oversample(train, smote, rng=rng_for(smote.seed, "smote", "final"))
    else:
        full = train
    (out / "models").mkdir(exist_ok=True)
    artifacts = {}
    for name, spec in cfg["models"].items():
        res = grid_search(spec["kind"], spec.get("grid", {}), train, folds, smote,
                          seed=child_seed(cfg["seed"], "grid", name), workers=workers,
                          fixed=spec.get("fixed", {}), fold_trains=fold_trains)
        res.write_csv(out / f"cv_{name}.csv")
        params = dict(res.best_params)
        if spec["kind"] in ("gbdt", "random_forest", "mlp"):
            params.setdefault("seed", child_seed(cfg["seed"], "final", name))
        art = fit_model(spec["kind"], full, params)
        (out / "models" / f"{name}.json").write_text(art.to_json() + "\n", encoding="utf-8")
        artifacts[name] = art
        log.info("trained %s: best candidate %d, cv AUROC %.4f", name, res.best_index,
                 res.cv_table[res.best_index]["mean_auroc"])
    return artifacts


def _models(cfg, out):
    arts = {}
    for name in cfg["models"]:
        arts[name] = ModelArtifact.from_json(_read_text(out, f"models/{name}.json"))
    return arts


def stage_evaluate(cfg, out, workers=1):
    out = Path(out)
    names = _selected(out)
    train = _matrix(out, "train_matrix.json").select(names)
    test = _matrix(out, "test_matrix.json").select(names)
    B = cfg["bootstrap"]["replicates"]
    boot_seed = child_seed(cfg["seed"], "bootstrap")
    rows, rocs, cals, aucs = [], {}, {}, {}
    for name, art in _models(cfg, out).items():
        p_train = art.predict_proba(train)
        p_test = art.predict_proba(test)
        # thresholds are chosen on training rows only
        thr = pick_threshold(p_train, train.labels, cfg["threshold_policy"])
        rep_test = metrics_report(p_test, test.labels, thr, B, boot_seed, workers)
        rep_train = metrics_report(p_train, train.labels, thr, B, boot_seed, workers)
        doc = {"model": name, "kind": art.kind, "params": art.params, "threshold_policy": cfg["threshold_policy"],
               "test": rep_test.to_dict(), "train": rep_train.to_dict()}
        _write_json(out / f"metrics_{name}.json", doc)
        roc = roc_points(p_test, test.labels)
        cal = calibration(p_test, test.labels)
        write_roc_csv(roc, out / f"roc_{name}.csv")
        write_calibration_csv(cal, out / f"calibration_{name}.csv")
        rocs[name], cals[name], aucs[name] = roc, cal, rep_test.metrics["auroc"]
        rows.append((name, rep_test))
    with open(out / "metrics_summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "metric", "value", "ci_lo", "ci_hi"])
        for name, rep in rows:
            for m, v in rep.metrics.items():
                lo, hi = rep.ci[m]
                w.writerow([name, m, "" if v is None else repr(v), "" if lo is None else repr(lo),
                            "" if hi is None else repr(hi)])
    plots = _plots(cfg, out)
    if plots is not None:
        from .plotting import plot_calibration, plot_roc

        plot_roc(rocs, plots / "roc.svg", aucs)
        plot_calibration(cals, plots / "calibration.svg")
    return dict(rows)


def stage_explain(cfg, out, workers=1):
    out = Path(out)
    names = _selected(out)
    test = _matrix(out, "test_matrix.json").select(names)
    primary = cfg["primary_model"]
    art = ModelArtifact.from_json(_read_text(out, f"models/{primary}.json"))
    attr = tree_shap(art.state, test.values)
    margin = art.margin(test)
    err = float(np.max(np.abs(attr.base_value + attr.phi.sum(axis=1) - margin))) if margin.size else 0.0
    order, importance = shap_summary_export(attr.phi, test.values, test.feature_names, test.row_ids,
                                            out / "shap_summary.csv")
    _write_json(out / "shap_meta.json", {
        "model": primary,
        "space": "margin (log-odds, before the sigmoid)",
        "background": "cover-weighted conditional expectation over training rows",
        "base_value": attr.base_value,
        "max_local_accuracy_error": err,
        "feature_order": order,
        "mean_abs_shap": [float(v) for v in importance],
    })
    plots = _plots(cfg, out)
    if plots is not None:
        from .plotting import plot_shap_beeswarm

        plot_shap_beeswarm(attr.phi, test.values, test.feature_names, order, plots / "shap_summary.svg")
    return attr


def stage_ablate(cfg, out, workers=1):
    out = Path(out)
    names = _selected(out)
    repeats = cfg["ablation"]["repeats"]
    if repeats == 0 or len(names) < 2:
        return None
    train = _matrix(out, "train_matrix.json").select(names)
    test = _matrix(out, "test_matrix.json").select(names)
    primary = cfg["primary_model"]
    art = ModelArtifact.from_json(_read_text(out, f"models/{primary}.json"))
    smote = _smote_params(cfg)
    if smote is None:
        raise ConfigError("ablation pairs fits by their SMOTE streams; enable smote")
    res = ablation_study(train, test, art.params, smote, repeats, child_seed(cfg["seed"], "ablation"), workers,
                         kind=art.kind)
    res.write_csv(out / "ablation.csv")
    plots = _plots(cfg, out)
    if plots is not None:
        from .plotting import plot_ablation

        plot_ablation(res, plots / "ablation.svg")
    return res


# ---------------------------------------------------------------------------
# manifest and atomic output


def _versions():
    def ver(pkg):
        try:
            return metadata.version(pkg)
        except metadata.PackageNotFoundError:
            return "unknown"

    return {"panc_risk": ver("artifact"), "numpy": ver("numpy"), "numba": ver("numba"),
            "matplotlib": ver("matplotlib"), "python": platform.python_version()}


def file_hashes(out):
    out = Path(out)
    hashes = {}
    for p in sorted(out.rglob("*")):
        if p.is_file() and p.name != "manifest.json":
            hashes[p.relative_to(out).as_posix()] = hashlib.sha256(p.read_bytes()).hexdigest()
    return hashes


def assumptions(cfg):
    """Settings the method description leaves open, with the values used."""
    return {
        "smote_k_neighbors": cfg["smote"]["k_neighbors"],
        "smote_target_ratio": cfg["smote"]["target_ratio"],
        "threshold_policy": cfg["threshold_policy"],
        "model_grids": {name: m.get("grid", {}) for name, m in sorted(cfg["models"].items())},
        "shap_space": "margin (log-odds), cover-weighted conditional expectation",
    }


def write_manifest(cfg, out):
    files = file_hashes(out)
    bundle = hashlib.sha256(json.dumps(files, sort_keys=True).encode()).hexdigest()
    doc = {"config_hash": config_mod.config_hash(cfg), "seed": cfg["seed"], "versions": _versions(),
           "assumptions": assumptions(cfg), "bundle_hash": bundle, "files": files}
    _write_json(Path(out) / "manifest.json", doc)
    return doc


class StagingDir:
    """Write into a temporary sibling directory, then merge into ``out``;
    on failure the temporary directory is removed and ``out`` is left as
    it was."""

    def __init__(self, out, replace=False):
        self.out = Path(out)
        self.replace = replace

    def __enter__(self):
        self.out.parent.mkdir(parents=True, exist_ok=True)
        self.tmp = Path(tempfile.mkdtemp(prefix=f".{self.out.name}.", dir=self.out.parent))
        if not self.replace and self.out.exists():
            shutil.copytree(self.out, self.tmp, dirs_exist_ok=True)
        return self.tmp

    def __exit__(self, exc_type, exc, tb):
        if exc_type is not None:
            shutil.rmtree(self.tmp, ignore_errors=True)
            return False
        if self.out.exists():
            old = self.out.with_name(self.tmp.name + ".old")
            os.replace(self.out, old)
            os.replace(self.tmp, self.out)
            shutil.rmtree(old, ignore_errors=True)
        else:
            os.replace(self.tmp, self.out)
        return False


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except PancRiskError as e:
        raise StageError(name, e) from e
    except (FloatingPointError, ArithmeticError, np.linalg.LinAlgError) as e:
        from .errors import NumericError

        raise StageError(name, NumericError(f"{type(e).__name__}: {e}")) from e


def run_stage(stage, cfg, out, workers=1, from_cohort=None):
    """Run one stage against an existing output directory."""
    fns = {"synth": lambda o: stage_synth(cfg, o),
           "ingest": lambda o: stage_ingest(cfg, o, from_cohort),
           "select": lambda o: stage_select(cfg, o, workers),
           "train": lambda o: stage_train(cfg, o, workers),
           "evaluate": lambda o: stage_evaluate(cfg, o, workers),
           "explain": lambda o: stage_explain(cfg, o, workers),
           "ablate": lambda o: stage_ablate(cfg, o, workers)}
    with StagingDir(out) as tmp:
        _stage(stage, fns[stage], tmp)
        write_manifest(cfg, tmp)


def run(cfg, out, workers=1, from_cohort=None):
    """All stages in order into a fresh output directory."""
    with StagingDir(out, replace=True) as tmp:
        if from_cohort is None and "synthetic" in cfg:
            _stage("synth", stage_synth, cfg, tmp)
        _stage("ingest", stage_ingest, cfg, tmp, from_cohort)
        _stage("select", stage_select, cfg, tmp, workers)
        _stage("train", stage_train, cfg, tmp, workers)
        _stage("evaluate", stage_evaluate, cfg, tmp, workers)
        _stage("explain", stage_explain, cfg, tmp, workers)
        _stage("ablate", stage_ablate, cfg, tmp, workers)
        manifest = write_manifest(cfg, tmp)
    return manifest
