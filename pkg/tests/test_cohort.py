import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from panc_risk.cohort import (Cohort, PatientRecord, RawEvent, aggregate_temporal, apply_exclusions,
                              export_cohort, export_events, generate_synthetic, ingest, table3_spec,
                              with_temporal_features)
from panc_risk.errors import DataError

HEADER = "patient_id,age,icu_los_hours,icu_stay_seq,renal_history,los_hospital,insurance,label\n"


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def rec(pid, age=40.0, hours=48.0, renal=False, seq=1, label=False):
    return PatientRecord(pid, age, hours, seq, renal, 5.0, "Medicare", label)


def test_ingest_three_rows_empty_events(tmp_path):
    s = write(tmp_path / "s.csv", HEADER + "p1,50,30,1,0,4,Private,0\np2,61,48,1,0,,Medicare,1\n"
              "p3,70,25,1,1,9,,0\n")
    e = write(tmp_path / "e.csv", "patient_id,hour,variable,value\n")
    c = ingest(s, e)
    assert len(c) == 3
    assert c.feature_names == ("age", "los_hospital", "insurance")
    assert [r.patient_id for r in c.records] == ["p1", "p2", "p3"]
    assert c.records[1].los_hospital is None and c.records[2].insurance is None
    assert with_temporal_features(c).feature_names == c.feature_names


def test_ingest_duplicate_id(tmp_path):
    s = write(tmp_path / "s.csv", HEADER + "p1,50,30,1,0,4,Private,0\np1,51,30,1,0,4,Private,0\n")
    with pytest.raises(DataError, match="p1"):
        ingest(s, None)


def test_ingest_malformed_row_names_line_and_column(tmp_path):
    s = write(tmp_path / "s.csv", HEADER + "p1,50,30,1,0,4,Private,0\np2,abc,30,1,0,4,Private,0\n")
    with pytest.raises(DataError, match=r"line 3.*column age"):
        ingest(s, None)


def test_ingest_unknown_event_patient(tmp_path):
    s = write(tmp_path / "s.csv", HEADER + "p1,50,30,1,0,4,Private,0\n")
    e = write(tmp_path / "e.csv", "patient_id,hour,variable,value\np9,3,heart_rate,80\n")
    with pytest.raises(DataError, match="p9"):
        ingest(s, e)


def test_ingest_1619_rows(tmp_path):
    lines = [f"p{i},{40 + i % 50},{10 + i % 60},{1 + i % 2},{i % 7 == 0:d},3,Medicare,{i % 5 == 0:d}"
             for i in range(1619)]
    s = write(tmp_path / "s.csv", HEADER + "\n".join(lines) + "\n")
    assert len(ingest(s, None)) == 1619


def test_events_hour_range():
    with pytest.raises(DataError):
        RawEvent("p", 24, "hr", 1.0)
    with pytest.raises(DataError):
        RawEvent("p", 3, "hr", math.inf)


def test_exclusion_examples():
    c = Cohort((rec("a", age=17), rec("b")), ("age", "los_hospital", "insurance"))
    kept, log = apply_exclusions(c)
    assert [r.patient_id for r in kept.records] == ["b"]
    assert list(log) == ["age_under_18", "icu_stay_under_24h", "renal_history", "repeat_icu_stay"]
    assert log["age_under_18"] == 1


def test_exclusion_first_matching_rule():
    c = Cohort((rec("a", age=17, hours=10),), ("age", "los_hospital", "insurance"))
    kept, log = apply_exclusions(c)
    assert len(kept) == 0
    assert dict(log) == {"age_under_18": 1, "icu_stay_under_24h": 0, "renal_history": 0,
                         "repeat_icu_stay": 0}


@given(st.lists(st.tuples(st.integers(10, 90), st.integers(0, 100), st.booleans(), st.integers(1, 3)),
                max_size=30))
def test_exclusion_idempotent(rows):
    c = Cohort(tuple(rec(f"p{i}", a, h, r, s) for i, (a, h, r, s) in enumerate(rows)),
               ("age", "los_hospital", "insurance"))
    once, log = apply_exclusions(c)
    twice, log2 = apply_exclusions(once)
    assert once.records == twice.records
    assert sum(log2.values()) == 0
    assert sum(log.values()) + len(once) == len(rows)


def test_aggregate_examples():
    ev = {"p": [RawEvent("p", h, "heart_rate", v) for h, v in enumerate([100.0, 120.0, 110.0])]
          + [RawEvent("p", 0, "spo2", 97.0)]}
    out = aggregate_temporal(ev, ["heart_rate", "spo2", "glucose"])["p"]
    assert (out["heart_rate_min"], out["heart_rate_max"], out["heart_rate_mean"]) == (100, 120, 110)
    assert out["spo2_min"] == out["spo2_max"] == out["spo2_mean"] == 97
    assert out["glucose_min"] is None and out["glucose_max"] is None and out["glucose_mean"] is None


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=24))
def test_aggregate_ordering(vals):
    ev = {"p": [RawEvent("p", h, "x", v) for h, v in enumerate(vals)]}
    out = aggregate_temporal(ev, ["x"])["p"]
    assert out["x_min"] <= out["x_mean"] <= out["x_max"]


def test_temporal_features_from_events(tmp_path):
    s = write(tmp_path / "s.csv", HEADER + "p1,50,30,1,0,4,Private,0\np2,61,48,1,0,,Medicare,1\n")
    e = write(tmp_path / "e.csv", "patient_id,hour,variable,value\np1,0,hr,100\np1,5,hr,120\n")
    c = with_temporal_features(ingest(s, e))
    assert c.feature_names[-3:] == ("hr_min", "hr_max", "hr_mean")
    assert c.records[0].features["hr_mean"] == 110
    assert c.records[1].features["hr_min"] is None


def test_generator_deterministic():
    spec = table3_spec(n=300)
    a, b = generate_synthetic(spec, 7), generate_synthetic(spec, 7)
    assert a == b
    assert generate_synthetic(spec, 8) != a


def test_generator_prevalence():
    c = generate_synthetic(table3_spec(), 3)
    n, p = 1172, 225 / 1172
    assert len(c) == n
    assert abs(c.labels.sum() - 225) <= 3 * math.sqrt(n * p * (1 - p))


def clipped_normal_mean(mu, sd, lo):
    # E[max(X, lo)] for X ~ N(mu, sd^2)
    a = (lo - mu) / sd
    pdf = math.exp(-0.5 * a * a) / math.sqrt(2 * math.pi)
    cdf = 0.5 * (1 + math.erf(a / math.sqrt(2)))
    return lo * cdf + mu * (1 - cdf) + sd * pdf


def test_generator_platelet_means():
    c = generate_synthetic(table3_spec(n=10_000), 5)
    plt_ = np.array(c.column("platelets_max"))
    y = c.labels
    for cls, mean, sd in ((False, 250.31, 147.89), (True, 384.87, 260.48)):
        x = plt_[y == cls]
        se = sd / math.sqrt(x.size)
        assert abs(x.mean() - mean) <= 3 * se
        assert abs(x.mean() - clipped_normal_mean(mean, sd, 0.0)) <= 3 * se
    assert plt_[y].mean() > plt_[~y].mean()


@pytest.mark.parametrize("name", ["age", "calcium_max", "heart_rate_mean"])
def test_generator_convergence(name):
    spec = table3_spec(n=12_000, prevalence=0.5)
    c = generate_synthetic(spec, 2)
    x = np.array(c.column(name))
    d = spec.features[name]
    for cls in (0, 1):
        v = x[c.labels == bool(cls)]
        assert v.size >= 2000
        assert abs(v.mean() - d.mean[cls]) <= 3 * d.sd[cls] / math.sqrt(v.size)


def test_generator_too_few_rows():
    with pytest.raises(DataError):
        generate_synthetic(table3_spec(n=10, prevalence=0.1), 0)


def test_export_ingest_roundtrip(tmp_path):
    c = generate_synthetic(table3_spec(n=60), 1)
    export_cohort(c, tmp_path / "c.csv")
    export_events(c, tmp_path / "e.csv")
    back = ingest(tmp_path / "c.csv", tmp_path / "e.csv")
    assert back.records == c.records
    assert back.feature_names == c.feature_names
