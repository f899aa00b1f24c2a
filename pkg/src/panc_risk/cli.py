"""Command line entry point: ``panc-risk <command> --config cfg.json --out dir``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
failure (1 for anything else).
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import pipeline
from .errors import ConfigError, NumericError, PancRiskError

COMMANDS = ("synth", "ingest", "select", "train", "evaluate", "explain", "ablate", "run")


def _default_workers():
    env = os.environ.get("PANC_RISK_WORKERS")
    if env is None:
        return 1
    try:
        n = int(env)
    except ValueError:
        raise ConfigError(f"PANC_RISK_WORKERS must be an integer, got {env!r}") from None
    if n < 1:
        raise ConfigError("PANC_RISK_WORKERS must be >= 1")
    return n


def build_parser():
    parser = argparse.ArgumentParser(prog="panc-risk",
                                     description="ICU readmission risk pipeline for acute pancreatitis.")
    sub = parser.add_subparsers(dest="command", metavar="command", required=True)
    helps = {
        "synth": "generate a synthetic cohort (cohort_raw.csv, events_raw.csv)",
        "ingest": "load the cohort, apply exclusions, split and preprocess",
        "select": "RFECV + LASSO hybrid feature selection",
        "train": "grid-search and fit every configured model",
        "evaluate": "test-set metrics with bootstrap intervals, ROC and calibration curves",
        "explain": "exact tree SHAP for the primary GBDT",
        "ablate": "leave-one-feature-out AUROC ablation",
        "run": "all stages in order into a fresh output directory",
    }
    for name in COMMANDS:
        p = sub.add_parser(name, help=helps[name])
        p.add_argument("--config", required=True, help="run configuration (JSON)")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--workers", type=int, help="worker threads (default: $PANC_RISK_WORKERS or 1)")
        p.add_argument("--out", help="output directory (overrides the config's 'output')")
        p.add_argument("-v", "--verbose", action="store_true")
        if name in ("run", "ingest"):
            p.add_argument("--from-cohort", help="start from a cohort CSV written by `synth`")
    return parser


def _resolve(args):
    path = Path(args.config)
    doc = config_mod.load(path)
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("--seed must be non-negative")
        doc["seed"] = args.seed
    if getattr(args, "from_cohort", None):
        # the cohort file replaces whatever source the config names
        doc.pop("synthetic", None)
        doc["input"] = {"static_csv": str(Path(args.from_cohort).resolve())}
    cfg = config_mod.resolve(doc, base_dir=path.parent)
    out = args.out or cfg.get("output")
    if out is None:
        raise ConfigError("no output directory: pass --out or set 'output' in the config")
    workers = args.workers if args.workers is not None else _default_workers()
    if workers < 1:
        raise ConfigError("--workers must be >= 1")
    return cfg, Path(out), workers


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg, out, workers = _resolve(args)
        from_cohort = getattr(args, "from_cohort", None)
        if args.command == "run":
            manifest = pipeline.run(cfg, out, workers, from_cohort)
            print(f"wrote {len(manifest['files']) + 1} files to {out} (bundle {manifest['bundle_hash'][:16]})")
        else:
            pipeline.run_stage(args.command, cfg, out, workers, from_cohort)
            print(f"{args.command}: wrote to {out}")
        return 0
    except PancRiskError as e:
        print(f"panc-risk: error: {e}", file=sys.stderr)
        return e.exit_code
    except (FloatingPointError, np.linalg.LinAlgError) as e:
        print(f"panc-risk: numeric failure: {e}", file=sys.stderr)
        return NumericError.exit_code


if __name__ == "__main__":
    sys.exit(main())
