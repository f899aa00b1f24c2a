import json
import shutil

import numpy as np
import pytest

from panc_risk import cli, pipeline
from panc_risk import config as config_mod
from panc_risk.errors import DataError, NumericError

SMALL = {
    "seed": 3,
    "synthetic": {"n": 400, "noise_feature_count": 2},
    "selection": {"rfecv": {"n_estimators": 10}, "lasso_grid_size": 10},
    "models": {
        "gbdt": {"kind": "gbdt", "fixed": {"n_rounds": 20}, "grid": {"max_depth": [2, 3]}},
        "logreg": {"kind": "logreg", "grid": {"C": [1.0]}},
    },
    "primary_model": "gbdt",
    "bootstrap": {"replicates": 50},
    "ablation": {"repeats": 2},
}

LAYOUT = ["manifest.json", "selection.json", "metrics_gbdt.json", "metrics_logreg.json", "roc_gbdt.csv",
          "calibration_gbdt.csv", "shap_summary.csv", "ablation.csv", "stats_split.csv", "stats_outcome.csv",
          "plots/roc.svg", "plots/calibration.svg", "plots/shap_summary.svg", "plots/rfecv_curve.svg",
          "plots/ablation.svg"]


def write_config(tmp_path, doc, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def manifest(out):
    return json.loads((out / "manifest.json").read_text())


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    d = tmp_path_factory.mktemp("run")
    cfg = write_config(d, SMALL)
    assert cli.main(["run", "--config", cfg, "--out", str(d / "out")]) == 0
    return d, cfg


def test_run_layout_and_manifest(small_run):
    d, _ = small_run
    out = d / "out"
    for name in LAYOUT:
        assert (out / name).is_file(), name
    m = manifest(out)
    on_disk = sorted(p.relative_to(out).as_posix() for p in out.rglob("*")
                     if p.is_file() and p.name != "manifest.json")
    assert sorted(m["files"]) == on_disk
    assert m["files"] == pipeline.file_hashes(out)
    assert m["seed"] == 3
    assert "assumptions" in m
    assert not [p for p in d.iterdir() if p.name.startswith(".out.")]


def test_rerun_and_worker_count_are_byte_identical(small_run, tmp_path):
    d, cfg = small_run
    ref = (d / "out" / "manifest.json").read_bytes()
    assert cli.main(["run", "--config", cfg, "--out", str(tmp_path / "w4"), "--workers", "4"]) == 0
    assert (tmp_path / "w4" / "manifest.json").read_bytes() == ref
    assert cli.main(["run", "--config", cfg, "--out", str(d / "out")]) == 0
    assert (d / "out" / "manifest.json").read_bytes() == ref


def test_stage_by_stage_equals_run(small_run, tmp_path):
    d, cfg = small_run
    out = str(tmp_path / "staged")
    for stage in ("synth", "ingest", "select", "train", "evaluate", "explain", "ablate"):
        assert cli.main([stage, "--config", cfg, "--out", out]) == 0, stage
    assert manifest(tmp_path / "staged")["files"] == manifest(d / "out")["files"]


def test_synth_then_from_cohort(small_run, tmp_path):
    d, cfg = small_run
    syn = tmp_path / "syn"
    assert cli.main(["synth", "--config", cfg, "--out", str(syn)]) == 0
    out = tmp_path / "fc"
    assert cli.main(["run", "--config", cfg, "--out", str(out), "--from-cohort", str(syn / "cohort_raw.csv")]) == 0
    inline = manifest(d / "out")["files"]
    composed = manifest(out)["files"]
    produced = {k: v for k, v in inline.items() if not k.endswith("_raw.csv")}
    assert composed == produced


def test_evaluate_replay(small_run, tmp_path):
    d, cfg = small_run
    out = tmp_path / "replay"
    shutil.copytree(d / "out", out)
    for p in out.glob("metrics_*"):
        p.unlink()
    assert cli.main(["evaluate", "--config", cfg, "--out", str(out)]) == 0
    for name in ("metrics_gbdt.json", "metrics_logreg.json", "metrics_summary.csv"):
        assert (out / name).read_bytes() == (d / "out" / name).read_bytes()


def test_seed_override_changes_results(small_run, tmp_path):
    d, cfg = small_run
    out = tmp_path / "s4"
    assert cli.main(["synth", "--config", cfg, "--out", str(out), "--seed", "4"]) == 0
    assert (out / "cohort_raw.csv").read_bytes() != (d / "out" / "cohort_raw.csv").read_bytes()


def test_both_inputs_rejected_before_work(tmp_path, capsys):
    doc = dict(SMALL, input={"static_csv": "x.csv"})
    cfg = write_config(tmp_path, doc)
    assert cli.main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert "exactly one of 'input' and 'synthetic'" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_config_errors(tmp_path, monkeypatch, capsys):
    assert cli.main(["run", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path / "o")]) == 2
    cfg = write_config(tmp_path, dict(SMALL, bogus=1))
    assert cli.main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert "bogus" in capsys.readouterr().err
    cfg = write_config(tmp_path, SMALL)
    assert cli.main(["run", "--config", cfg]) == 2
    monkeypatch.setenv("PANC_RISK_WORKERS", "many")
    assert cli.main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert not (tmp_path / "o").exists()


def test_unknown_subcommand(capsys):
    with pytest.raises(SystemExit) as e:
        cli.main(["frobnicate", "--config", "c.json"])
    assert e.value.code != 0
    assert "usage:" in capsys.readouterr().err


def test_missing_stage_input(tmp_path, capsys):
    cfg = write_config(tmp_path, SMALL)
    assert cli.main(["select", "--config", cfg, "--out", str(tmp_path / "o")]) == 3
    err = capsys.readouterr().err
    assert "stage select" in err and "train_matrix.json" in err
    assert not (tmp_path / "o").exists()


def test_data_error_exit_code(tmp_path):
    bad = tmp_path / "static.csv"
    bad.write_text("patient_id,age\np1,40\n")
    cfg = write_config(tmp_path, {"seed": 1, "input": {"static_csv": "static.csv"}})
    assert cli.main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) == 3


def test_failed_stage_leaves_no_partial_output(tmp_path, monkeypatch, capsys):
    def broken(*a, **k):
        raise DataError("no attributions")

    monkeypatch.setattr(pipeline, "stage_explain", broken)
    cfg = write_config(tmp_path, SMALL)
    out = tmp_path / "o"
    out.mkdir()
    (out / "keep.txt").write_text("previous run")
    assert cli.main(["run", "--config", cfg, "--out", str(out)]) == 3
    assert "stage explain" in capsys.readouterr().err
    assert sorted(p.name for p in out.iterdir()) == ["keep.txt"]
    assert not [p for p in tmp_path.iterdir() if p.name.startswith(".o.")]


def test_numeric_failure_exit_code(tmp_path, monkeypatch):
    def boom(*a, **k):
        raise NumericError("diverged")

    monkeypatch.setattr(pipeline, "stage_select", boom)
    cfg = write_config(tmp_path, SMALL)
    assert cli.main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) == 4
    monkeypatch.setattr(pipeline, "stage_select", lambda *a, **k: np.log(np.array([-1.0])) / 0)
    with np.errstate(all="raise"):
        assert cli.main(["run", "--config", cfg, "--out", str(tmp_path / "o2")]) == 4


def test_config_hash_ignores_output():
    a = config_mod.resolve(dict(SMALL, output="a"))
    b = config_mod.resolve(dict(SMALL, output="b"))
    assert config_mod.config_hash(a) == config_mod.config_hash(b)
