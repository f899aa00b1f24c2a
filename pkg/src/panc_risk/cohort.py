"""Patient data model, CSV ingest/export, exclusion cascade, temporal
aggregates and the synthetic cohort generator."""
from __future__ import annotations

import csv
import json
import math
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import DataError

STATIC_COLUMNS = (
    "patient_id",
    "age",
    "icu_los_hours",
    "icu_stay_seq",
    "renal_history",
    "los_hospital",
    "insurance",
    "label",
)
EVENT_COLUMNS = ("patient_id", "hour", "variable", "value")
CATEGORICAL = ("insurance",)
BASE_FEATURES = ("age", "los_hospital", "insurance")

EXCLUSION_RULES = (
    ("age_under_18", lambda r: r.age < 18),
    ("icu_stay_under_24h", lambda r: r.icu_los_hours < 24),
    ("renal_history", lambda r: r.renal_history),
    ("repeat_icu_stay", lambda r: r.icu_stay_seq > 1),
)


@dataclass(frozen=True)
class RawEvent:
    patient_id: str
    hour: int
    variable: str
    value: float

    def __post_init__(self):
        if not 0 <= self.hour <= 23:
            raise DataError(f"event hour {self.hour} outside [0, 23]")
        if not math.isfinite(self.value):
            raise DataError(f"non-finite event value for {self.variable!r}")
        if not self.variable:
            raise DataError("event variable name is empty")


@dataclass(frozen=True)
class PatientRecord:
    patient_id: str
    age: float
    icu_los_hours: float
    icu_stay_seq: int
    renal_history: bool
    los_hospital: float | None
    insurance: str | None
    label: bool
    # extra static columns and derived temporal aggregates; None = missing
    features: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.age < 0:
            raise DataError(f"{self.patient_id}: negative age")
        if self.icu_los_hours < 0:
            raise DataError(f"{self.patient_id}: negative icu_los_hours")
        if self.icu_stay_seq < 1:
            raise DataError(f"{self.patient_id}: icu_stay_seq must be >= 1")

    def value(self, name):
        if name == "age":
            return self.age
        if name == "los_hospital":
            return self.los_hospital
        if name == "insurance":
            return self.insurance
        return self.features.get(name)


@dataclass(frozen=True)
class Cohort:
    records: tuple
    feature_names: tuple
    provenance: str = "ingested"
    events: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        ids = [r.patient_id for r in self.records]
        if len(set(ids)) != len(ids):
            raise DataError("patient ids in a cohort must be unique")
        if self.provenance not in ("ingested", "synthetic"):
            raise ValueError(f"unknown provenance {self.provenance!r}")
        extra = set(self.feature_names) - set(BASE_FEATURES)
        for r in self.records:
            if set(r.features) != extra:
                raise DataError(f"{r.patient_id}: feature set differs from cohort schema")

    def __len__(self):
        return len(self.records)

    @property
    def labels(self):
        return np.array([r.label for r in self.records], dtype=bool)

    def column(self, name):
        return [r.value(name) for r in self.records]


@dataclass(frozen=True)
class FeatureDist:
    mean: tuple  # (non-readmitted, readmitted)
    sd: tuple
    lower: float | None = None
    upper: float | None = None


@dataclass(frozen=True)
class CohortSpec:
    features: dict  # name -> FeatureDist, in generation order
    prevalence: float
    n: int
    correlation_strength: float = 0.0
    noise_feature_count: int = 0
    insurance: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 < self.prevalence < 1.0:
            raise DataError("prevalence must lie in (0, 1)")
        if not 0.0 <= self.correlation_strength <= 1.0:
            raise DataError("correlation_strength must lie in [0, 1]")
        if self.noise_feature_count < 0:
            raise DataError("noise_feature_count must be >= 0")
        for name, d in self.features.items():
            if min(d.sd) <= 0:
                raise DataError(f"{name}: standard deviations must be positive")


def table3_spec(n=None, prevalence=None, correlation_strength=0.2, noise_feature_count=5):
    """CohortSpec built from the packaged readmitted / non-readmitted table."""
    doc = json.loads(resources.files(__package__).joinpath("data/table3.json").read_text())
    feats = OrderedDict(
        (name, FeatureDist(tuple(d["mean"]), tuple(d["sd"]), d.get("lower"), d.get("upper")))
        for name, d in doc["features"].items()
    )
    return CohortSpec(
        features=feats,
        prevalence=doc["prevalence"] if prevalence is None else prevalence,
        n=doc["n"] if n is None else n,
        correlation_strength=correlation_strength,
        noise_feature_count=noise_feature_count,
        insurance=doc["insurance"],
    )


def noise_feature_names(count):
    return [f"noise_{i + 1}" for i in range(count)]


def generate_synthetic(spec: CohortSpec, seed: int) -> Cohort:
    """Draw a cohort from class-conditional normals sharing one latent factor.

    Feature j of a patient in class c is
    ``mean[c] + sd[c] * (sqrt(1 - rho) * e_j + sqrt(rho) * s)`` clipped to the
    feature's bounds, where ``s`` is shared by all features of the patient.
    Noise features are independent standard normals with no class link.
    """
    n = spec.n
    if spec.prevalence * n < 2 or (1 - spec.prevalence) * n < 2:
        raise DataError("prevalence * n < 2: too few rows per class to stratify")
    rng = np.random.default_rng(seed)
    labels = rng.random(n) < spec.prevalence
    shared = rng.standard_normal(n)
    rho = spec.correlation_strength
    cls = labels.astype(int)

    columns = OrderedDict()
    for name, d in spec.features.items():
        own = rng.standard_normal(n)
        z = math.sqrt(1.0 - rho) * own + math.sqrt(rho) * shared
        x = np.asarray(d.mean)[cls] + np.asarray(d.sd)[cls] * z
        lo = -np.inf if d.lower is None else d.lower
        hi = np.inf if d.upper is None else d.upper
        columns[name] = np.clip(x, lo, hi)
    for name in noise_feature_names(spec.noise_feature_count):
        columns[name] = rng.standard_normal(n)

    if spec.insurance:
        cats = list(spec.insurance)
        probs = np.array([spec.insurance[c] for c in cats], dtype=float)
        insurance = [cats[i] for i in rng.choice(len(cats), size=n, p=probs / probs.sum())]
    else:
        insurance = [None] * n
    icu_hours = np.round(24.0 + rng.exponential(72.0, size=n), 1)

    age = columns.pop("age", None)
    los = columns.pop("los_hospital", None)
    extra = list(columns)
    width = len(str(n))
    records = []
    for i in range(n):
        records.append(
            PatientRecord(
                patient_id=f"S{i + 1:0{width}d}",
                age=float(age[i]) if age is not None else 60.0,
                icu_los_hours=float(icu_hours[i]),
                icu_stay_seq=1,
                renal_history=False,
                los_hospital=float(los[i]) if los is not None else None,
                insurance=insurance[i],
                label=bool(labels[i]),
                features={k: float(columns[k][i]) for k in extra},
            )
        )
    return Cohort(tuple(records), BASE_FEATURES + tuple(extra), provenance="synthetic")


# ---------------------------------------------------------------------------
# ingest / export


def _parse_float(text, where, allow_missing=False):
    if text == "":
        if allow_missing:
            return None
        raise DataError(f"{where}: value required")
    try:
        v = float(text)
    except ValueError:
        raise DataError(f"{where}: not a number: {text!r}") from None
    if not math.isfinite(v):
        raise DataError(f"{where}: non-finite value {text!r}")
    return v


def _parse_flag(text, where):
    if text not in ("0", "1"):
        raise DataError(f"{where}: expected 0 or 1, got {text!r}")
    return text == "1"


def _parse_int(text, where):
    try:
        return int(text)
    except ValueError:
        raise DataError(f"{where}: not an integer: {text!r}") from None


def _read_rows(path, required):
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: file not found")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file, header expected") from None
        if tuple(header[: len(required)]) != tuple(required):
            raise DataError(f"{path}: header must start with {','.join(required)}")
        if len(set(header)) != len(header):
            raise DataError(f"{path}: duplicate column names in header")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}, line {lineno}: expected {len(header)} fields, got {len(row)}")
            yield header, lineno, row


def ingest(static_csv, events_csv) -> Cohort:
    """Read the static and events extracts into a Cohort.

    Static columns past the required header are taken as extra numeric
    features.  ``events_csv`` may be None for a cohort without events.
    Events are validated and grouped per patient; use
    :func:`with_temporal_features` to turn them into aggregate columns.
    """
    records = []
    seen = set()
    extra = ()
    for header, lineno, row in _read_rows(static_csv, STATIC_COLUMNS):
        extra = tuple(header[len(STATIC_COLUMNS):])
        cell = dict(zip(header, row))

        def where(col):
            return f"{static_csv}, line {lineno}, column {col}"

        pid = cell["patient_id"]
        if not pid:
            raise DataError(f"{where('patient_id')}: empty patient id")
        if pid in seen:
            raise DataError(f"{static_csv}, line {lineno}: duplicate patient_id {pid!r}")
        seen.add(pid)
        try:
            rec = PatientRecord(
                patient_id=pid,
                age=_parse_float(cell["age"], where("age")),
                icu_los_hours=_parse_float(cell["icu_los_hours"], where("icu_los_hours")),
                icu_stay_seq=_parse_int(cell["icu_stay_seq"], where("icu_stay_seq")),
                renal_history=_parse_flag(cell["renal_history"], where("renal_history")),
                los_hospital=_parse_float(cell["los_hospital"], where("los_hospital"), True),
                insurance=cell["insurance"] or None,
                label=_parse_flag(cell["label"], where("label")),
                features={c: _parse_float(cell[c], where(c), True) for c in extra},
            )
        except DataError as exc:
            if str(exc).startswith(str(static_csv)):
                raise
            raise DataError(f"{static_csv}, line {lineno}: {exc}") from None
        records.append(rec)

    events = OrderedDict((r.patient_id, []) for r in records)
    event_rows = () if events_csv is None else _read_rows(events_csv, EVENT_COLUMNS)
    for _, lineno, row in event_rows:
        pid, hour, variable, value = row[:4]
        where = f"{events_csv}, line {lineno}"
        if pid not in events:
            raise DataError(f"{where}: event references unknown patient {pid!r}")
        try:
            ev = RawEvent(pid, _parse_int(hour, where + ", column hour"), variable,
                          _parse_float(value, where + ", column value"))
        except DataError as exc:
            if str(exc).startswith(str(events_csv)):
                raise
            raise DataError(f"{where}: {exc}") from None
        events[pid].append(ev)

    return Cohort(tuple(records), BASE_FEATURES + extra, provenance="ingested", events=dict(events))


def aggregate_temporal(events, variables):
    """Per-patient min / max / mean of each requested variable.

    ``events`` maps patient id to a list of RawEvent.  Returns
    ``{patient_id: {f"{v}_min": ..., f"{v}_max": ..., f"{v}_mean": ...}}`` with
    None for every aggregate of a variable the patient never had measured.
    """
    out = {}
    for pid, evs in events.items():
        by_var = {}
        for ev in evs:
            by_var.setdefault(ev.variable, []).append(ev.value)
        row = {}
        for v in variables:
            vals = by_var.get(v)
            if vals:
                lo, hi = min(vals), max(vals)
                row[f"{v}_min"] = lo
                row[f"{v}_max"] = hi
                # the rounded quotient can land one ulp outside [lo, hi]
                row[f"{v}_mean"] = min(max(math.fsum(vals) / len(vals), lo), hi)
            else:
                row[f"{v}_min"] = row[f"{v}_max"] = row[f"{v}_mean"] = None
        out[pid] = row
    return out


def with_temporal_features(cohort: Cohort, variables=None) -> Cohort:
    """Append temporal aggregate columns derived from the cohort's events."""
    if variables is None:
        variables = sorted({ev.variable for evs in cohort.events.values() for ev in evs})
    if not variables:
        return cohort
    agg = aggregate_temporal({r.patient_id: cohort.events.get(r.patient_id, []) for r in cohort.records},
                             variables)
    names = [f"{v}_{s}" for v in variables for s in ("min", "max", "mean")]
    clash = set(names) & set(cohort.feature_names)
    if clash:
        raise DataError(f"temporal columns clash with static columns: {sorted(clash)}")
    records = tuple(replace(r, features={**r.features, **agg[r.patient_id]}) for r in cohort.records)
    return replace(cohort, records=records, feature_names=cohort.feature_names + tuple(names))


def apply_exclusions(cohort: Cohort):
    """Run the ordered exclusion cascade.

    Returns the retained cohort and an ordered ``{rule: removed_count}`` log;
    a record matching several rules is counted under the first one only.
    """
    log = OrderedDict((name, 0) for name, _ in EXCLUSION_RULES)
    kept = []
    for r in cohort.records:
        for name, rule in EXCLUSION_RULES:
            if rule(r):
                log[name] += 1
                break
        else:
            kept.append(r)
    keep_ids = {r.patient_id for r in kept}
    events = {k: v for k, v in cohort.events.items() if k in keep_ids}
    return replace(cohort, records=tuple(kept), events=events), log


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def export_cohort(cohort: Cohort, path):
    """Write the cohort as one flat CSV that :func:`ingest` reads back exactly."""
    extra = [f for f in cohort.feature_names if f not in BASE_FEATURES]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(STATIC_COLUMNS) + extra)
        for r in cohort.records:
            w.writerow(
                [r.patient_id, _fmt(float(r.age)), _fmt(float(r.icu_los_hours)), r.icu_stay_seq,
                 _fmt(r.renal_history),
                 _fmt(None if r.los_hospital is None else float(r.los_hospital)),
                 r.insurance or "", _fmt(r.label)]
                + [_fmt(r.features[c]) for c in extra]
            )


def export_events(cohort: Cohort, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EVENT_COLUMNS)
        for r in cohort.records:
            for ev in cohort.events.get(r.patient_id, []):
                w.writerow([ev.patient_id, ev.hour, ev.variable, _fmt(float(ev.value))])
