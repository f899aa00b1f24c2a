import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats as sps

from panc_risk._rng import stream_fingerprint
from panc_risk.cohort import apply_exclusions, generate_synthetic, table3_spec
from panc_risk.errors import DataError
from panc_risk.explain import ablation as ablation_mod
from panc_risk.explain.ablation import ablation_study, repeat_seed
from panc_risk.explain.shap import shap_brute_force, shap_summary_export, tree_shap
from panc_risk.explain.specfun import chi2_sf, t_sf2
from panc_risk.explain.stats import chi_square, compare_groups, t_test, t_test_from_stats, write_comparison_csv
from panc_risk.models.artifact import fit_model
from panc_risk.models.trees import Tree, TreeEnsemble
from panc_risk.preprocess import fit_transform, from_cohort
from panc_risk.resample import SmoteParams
from conftest import make_matrix


def build_tree(nodes):
    """``nodes`` in preorder: (feature, threshold, left, right, value, cover, missing_left)."""
    cols = list(zip(*nodes))
    return Tree.from_dict({"feature": cols[0], "threshold": cols[1], "left": cols[2], "right": cols[3],
                           "value": cols[4], "cover": cols[5], "gain": [0.0] * len(nodes),
                           "missing_left": [int(m) for m in cols[6]]})


def random_tree(rng, p, max_depth):
    nodes = []

    def grow(depth):
        i = len(nodes)
        nodes.append(None)
        if depth == max_depth or (depth > 0 and rng.random() < 0.3):
            cover = float(rng.integers(1, 30))
            nodes[i] = (-1, 0.0, -1, -1, float(rng.normal()), cover, True)
            return cover
        f, thr, miss = int(rng.integers(p)), float(rng.random()), bool(rng.random() < 0.5)
        li = len(nodes)
        cl = grow(depth + 1)
        ri = len(nodes)
        cr = grow(depth + 1)
        nodes[i] = (f, thr, li, ri, 0.0, cl + cr, miss)
        return cl + cr

    grow(0)
    return build_tree(nodes)


def random_ensemble(rng, p):
    trees = tuple(random_tree(rng, p, int(rng.integers(1, 5))) for _ in range(int(rng.integers(1, 6))))
    kind = "boosted" if rng.random() < 0.7 else "bagged"
    return TreeEnsemble(trees, float(rng.normal()), kind, float(rng.uniform(0.05, 1.0)), p)


def random_instance(rng, p):
    x = rng.random(p)
    x[rng.random(p) < 0.1] = np.nan
    return x


STUMP = build_tree([(0, 0.5, 1, 2, 0.0, 2.0, True), (-1, 0.0, -1, -1, 0.0, 1.0, True),
                    (-1, 0.0, -1, -1, 1.0, 1.0, True)])


def table3_matrix(seed):
    cohort, _ = apply_exclusions(generate_synthetic(table3_spec(), seed))
    raw = from_cohort(cohort)
    return fit_transform(raw).apply(raw)


# ---------------------------------------------------------------- tree shap


def test_stump_example():
    ens = TreeEnsemble((STUMP,), 0.0, "boosted", 1.0, 3)
    a = tree_shap(ens, np.array([0.9, 0.2, 0.7]))
    assert a.base_value == 0.5
    np.testing.assert_array_equal(a.phi, [0.5, 0.0, 0.0])


def test_empty_ensemble():
    ens = TreeEnsemble((), -1.25, "boosted", 0.1, 4)
    a = tree_shap(ens, np.ones((3, 4)))
    assert a.base_value == -1.25
    assert np.all(a.phi == 0.0)


def test_duplicated_trees_double():
    rng = np.random.default_rng(3)
    t = random_tree(rng, 4, 4)
    x = rng.random((20, 4))
    one = tree_shap(TreeEnsemble((t,), 0.0, "boosted", 1.0, 4), x).phi
    two = tree_shap(TreeEnsemble((t, t), 0.0, "boosted", 1.0, 4), x).phi
    np.testing.assert_array_equal(two, 2.0 * one)


def test_matches_brute_force_random_ensembles():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        p = int(rng.integers(1, 7))
        ens = random_ensemble(rng, p)
        for _ in range(3):
            x = random_instance(rng, p)
            fast = tree_shap(ens, x)
            slow = shap_brute_force(ens, x)
            worst = max(worst, float(np.max(np.abs(fast.phi - slow.phi))))
            assert abs(fast.base_value - slow.base_value) < 1e-9
            assert abs(fast.total() - ens.margin(x[None, :])[0]) < 1e-9
    assert worst < 1e-9


def test_repeated_feature_on_path():
    # the same feature split three times along one path
    t = build_tree([(0, 0.5, 1, 6, 0.0, 10.0, True),
                    (1, 0.3, 2, 3, 0.0, 6.0, False),
                    (-1, 0.0, -1, -1, 1.0, 2.0, True),
                    (0, 0.2, 4, 5, 0.0, 4.0, True),
                    (-1, 0.0, -1, -1, -2.0, 1.0, True),
                    (-1, 0.0, -1, -1, 3.0, 3.0, True),
                    (-1, 0.0, -1, -1, 0.5, 4.0, True)])
    ens = TreeEnsemble((t,), 0.0, "boosted", 1.0, 2)
    for x in ([0.1, 0.9], [0.4, 0.9], [0.9, 0.1], [0.4, 0.1]):
        x = np.array(x)
        np.testing.assert_allclose(tree_shap(ens, x).phi, shap_brute_force(ens, x).phi, atol=1e-12)


def test_symmetry():
    # value = [x0 > .5] + [x1 > .5] with mirrored covers
    t = build_tree([(0, 0.5, 1, 4, 0.0, 8.0, True),
                    (1, 0.5, 2, 3, 0.0, 4.0, True),
                    (-1, 0.0, -1, -1, 0.0, 2.0, True),
                    (-1, 0.0, -1, -1, 1.0, 2.0, True),
                    (1, 0.5, 5, 6, 0.0, 4.0, True),
                    (-1, 0.0, -1, -1, 1.0, 2.0, True),
                    (-1, 0.0, -1, -1, 2.0, 2.0, True)])
    ens = TreeEnsemble((t,), 0.0, "boosted", 1.0, 2)
    for v in (0.2, 0.9):
        phi = tree_shap(ens, np.array([v, v])).phi
        assert phi[0] == pytest.approx(phi[1], abs=1e-15)
        np.testing.assert_allclose(phi, shap_brute_force(ens, np.array([v, v])).phi, atol=1e-15)


def test_null_player_exact_zero():
    rng = np.random.default_rng(8)
    for _ in range(20):
        ens = random_ensemble(rng, 3)
        # widen to 5 columns; features 3 and 4 never split
        ens = TreeEnsemble(ens.trees, ens.base_margin, ens.kind, ens.learning_rate, 5)
        phi = tree_shap(ens, rng.random((10, 5))).phi
        assert np.all(phi[:, 3:] == 0.0)


def test_additivity():
    rng = np.random.default_rng(9)
    for _ in range(20):
        a, b = random_ensemble(rng, 4), random_ensemble(rng, 4)
        a = TreeEnsemble(a.trees, 0.3, "boosted", 0.5, 4)
        b = TreeEnsemble(b.trees, -0.1, "boosted", 0.5, 4)
        ab = TreeEnsemble(a.trees + b.trees, 0.2, "boosted", 0.5, 4)
        X = rng.random((15, 4))
        np.testing.assert_allclose(tree_shap(ab, X).phi, tree_shap(a, X).phi + tree_shap(b, X).phi,
                                   atol=1e-12)


def test_batch_equals_rows():
    rng = np.random.default_rng(10)
    ens = random_ensemble(rng, 5)
    X = rng.random((7, 5))
    batch = tree_shap(ens, X).phi
    for i in range(7):
        np.testing.assert_array_equal(batch[i], tree_shap(ens, X[i]).phi)


def test_errors():
    with pytest.raises(DataError, match="p <= 12"):
        shap_brute_force(TreeEnsemble((), 0.0, "boosted", 1.0, 13), np.zeros(13))
    bad = Tree.from_dict({**STUMP.to_dict(), "cover": [0.0, 0.0, 0.0]})
    with pytest.raises(DataError, match="cover"):
        tree_shap(TreeEnsemble((bad,), 0.0, "boosted", 1.0, 1), np.zeros(1))
    with pytest.raises(DataError, match="expected 2 features"):
        tree_shap(TreeEnsemble((STUMP,), 0.0, "boosted", 1.0, 2), np.zeros(3))


@pytest.mark.parametrize("growth,extra", [("depthwise", {"max_depth": 4}),
                                          ("leafwise", {"max_depth": 8, "max_leaves": 31})])
def test_local_accuracy_on_synthetic_fixture(table3_cohort, growth, extra):
    raw = from_cohort(table3_cohort)
    m = fit_transform(raw).apply(raw)
    art = fit_model("gbdt", m, {"n_rounds": 60, "growth": growth, "seed": 1, **extra})
    rows = np.random.default_rng(0).integers(0, len(m.labels), 1000)
    X = m.values[rows]
    a = tree_shap(art.state, X)
    err = np.abs(a.base_value + a.phi.sum(axis=1) - art.margin(X))
    assert err.max() < 1e-9


def clipped_moments(mu, sd, lo, hi):
    """Mean and SD of min(max(X, lo), hi) for X ~ N(mu, sd^2)."""
    a, b = (lo - mu) / sd, (hi - mu) / sd
    pa, pb = sps.norm.pdf(a), sps.norm.pdf(b)
    below, above = sps.norm.cdf(a), sps.norm.sf(b)
    inside = 1.0 - below - above
    apa = a * pa if math.isfinite(a) else 0.0
    bpb = b * pb if math.isfinite(b) else 0.0
    edge1 = (lo * below if below else 0.0) + (hi * above if above else 0.0)
    edge2 = (lo * lo * below if below else 0.0) + (hi * hi * above if above else 0.0)
    m1 = edge1 + mu * inside + sd * (pa - pb)
    m2 = edge2 + (mu * mu + sd * sd) * inside + 2 * mu * sd * (pa - pb) + sd * sd * (apa - bpb)
    return m1, math.sqrt(m2 - m1 * m1)


def test_top_shap_features_track_effect_size():
    spec = table3_spec()

    def effect(d):
        lo = -math.inf if d.lower is None else d.lower
        hi = math.inf if d.upper is None else d.upper
        (m0, s0), (m1, s1) = (clipped_moments(d.mean[k], d.sd[k], lo, hi) for k in (0, 1))
        return abs(m1 - m0) / math.sqrt((s0 * s0 + s1 * s1) / 2)

    # ranked on the clipped distributions the generator actually draws from
    top_effect = set(sorted(spec.features, key=lambda f: -effect(spec.features[f]))[:3])
    hits = []
    for seed in range(10):
        m = table3_matrix(seed)
        art = fit_model("gbdt", m, {"n_rounds": 100, "max_depth": 3, "seed": seed})
        a = tree_shap(art.state, m.values)
        order, _ = shap_summary_export(a.phi, m.values, m.feature_names, m.row_ids)
        hits.append(len(set(order[:3]) & top_effect))
    assert min(hits) >= 2, hits


# ---------------------------------------------------------------- summary export


def test_summary_single_row(tmp_path):
    order, imp = shap_summary_export([[0.25]], [[0.5]], ["a"], ["p1"], tmp_path / "s.csv")
    rows = list(csv.reader(open(tmp_path / "s.csv")))
    assert order == ["a"] and imp.tolist() == [0.25]
    assert rows == [["feature", "instance_id", "shap_value", "scaled_feature_value"], ["a", "p1", "0.25", "0.5"]]


def test_summary_ordering(tmp_path):
    phi = np.array([[0.1, -0.9, 0.0], [0.1, 0.5, 0.0]])
    order, imp = shap_summary_export(phi, np.zeros((2, 3)), ["a", "b", "c"], ["p1", "p2"], tmp_path / "s.csv")
    assert order == ["b", "a", "c"]
    np.testing.assert_allclose(imp, [0.7, 0.1, 0.0])
    feats = [r[0] for r in list(csv.reader(open(tmp_path / "s.csv")))[1:]]
    assert feats == ["b", "b", "a", "a", "c", "c"]
    with pytest.raises(DataError):
        shap_summary_export(np.zeros((0, 3)), np.zeros((0, 3)), ["a", "b", "c"], [])


# ---------------------------------------------------------------- statistics


def test_t_reference_value():
    assert t_sf2(2.0, 10) == pytest.approx(0.07339, abs=1e-4)
    assert t_sf2(2.0, 10) == pytest.approx(2 * sps.t.sf(2.0, 10), abs=1e-10)


@given(st.floats(-40, 40), st.floats(0.5, 5000))
@settings(max_examples=300, deadline=None)
def test_t_tail_against_reference(t, df):
    assert abs(t_sf2(t, df) - 2 * sps.t.sf(abs(t), df)) < 1e-10


@given(st.floats(0, 300), st.integers(1, 60))
@settings(max_examples=300, deadline=None)
def test_chi2_tail_against_reference(x, df):
    assert abs(chi2_sf(x, df) - sps.chi2.sf(x, df)) < 1e-10


def test_t_examples():
    r = t_test([1, 2, 3], [1, 2, 3])
    assert r.statistic == 0.0 and r.p_value == pytest.approx(1.0, abs=1e-12)
    pl = t_test_from_stats(250.31, 147.89, 947, 384.87, 260.48, 225)
    assert pl.p_value < 0.001 and pl.statistic < 0 and pl.df == 1170
    # the published calcium p-value is the unpooled one; pooling gives 0.0125
    ca = t_test_from_stats(8.42, 0.91, 820, 8.28, 0.80, 352, variant="welch")
    assert abs(ca.p_value - 0.009) <= 0.003
    pooled = t_test_from_stats(8.42, 0.91, 820, 8.28, 0.80, 352)
    ref = sps.ttest_ind_from_stats(8.42, 0.91, 820, 8.28, 0.80, 352, equal_var=True)
    assert pooled.p_value == pytest.approx(ref.pvalue, abs=1e-10)


def test_welch_against_reference():
    w = t_test_from_stats(250.31, 147.89, 947, 384.87, 260.48, 225, variant="welch")
    ref = sps.ttest_ind_from_stats(250.31, 147.89, 947, 384.87, 260.48, 225, equal_var=False)
    assert w.statistic == pytest.approx(ref.statistic, rel=1e-12)
    assert w.p_value == pytest.approx(ref.pvalue, abs=1e-10)


@given(st.lists(st.floats(-100, 100), min_size=2, max_size=30),
       st.lists(st.floats(-100, 100), min_size=2, max_size=30), st.sampled_from(["student", "welch"]))
@settings(max_examples=200, deadline=None)
def test_t_antisymmetric(a, b, variant):
    if np.var(a, ddof=1) == 0 and np.var(b, ddof=1) == 0:
        return
    ab, ba = t_test(a, b, variant), t_test(b, a, variant)
    assert ab.statistic == -ba.statistic
    assert ab.p_value == ba.p_value
    assert 0.0 <= ab.p_value <= 1.0


def test_t_errors():
    with pytest.raises(DataError):
        t_test([1], [1, 2])
    with pytest.raises(DataError):
        t_test([2, 2], [2, 2])
    with pytest.raises(DataError):
        t_test([1, 2], [1, 2], variant="paired")


def test_chi_square_examples():
    r = chi_square([[10, 10], [10, 10]])
    assert r.statistic == 0.0 and r.p_value == 1.0
    r = chi_square([[20, 0], [0, 20]])
    assert r.statistic == 40.0 and r.p_value < 1e-9
    r = chi_square([[5, 5, 5], [5, 5, 5]])
    assert r.statistic == 0.0 and r.df == 2
    ref = sps.chi2_contingency([[12, 30, 7], [20, 18, 9]], correction=False)
    r = chi_square([[12, 30, 7], [20, 18, 9]])
    assert r.statistic == pytest.approx(ref.statistic, rel=1e-12)
    assert r.p_value == pytest.approx(ref.pvalue, abs=1e-10)
    with pytest.raises(DataError, match="zero expected"):
        chi_square([[0, 3], [0, 4]])


def test_compare_groups_table(tmp_path):
    X = np.array([[1.0, 0], [2.0, 1], [3.0, 0], [7.0, 1], [8.0, 1], [9.0, 1]])
    m = make_matrix(X, [0, 0, 0, 1, 1, 1], names=["num", "cat"], categories={"cat": ("a", "b")})
    rows = compare_groups(m, m.labels)
    assert [r.feature for r in rows] == sorted(["num", "cat"], key=lambda f: -{r.feature: r.p_value
                                                                               for r in rows}[f])
    num = next(r for r in rows if r.feature == "num")
    assert num.student.statistic == t_test([1, 2, 3], [7, 8, 9]).statistic
    assert num.summary1 == "2.00 (1.00)"
    write_comparison_csv(rows, tmp_path / "t.csv", ("train", "test"))
    head = next(csv.reader(open(tmp_path / "t.csv")))
    assert head[:4] == ["feature", "train_mean_sd", "test_mean_sd", "test"]


# ---------------------------------------------------------------- ablation


def signal_fixture(n, seed, constant=False):
    rng = np.random.default_rng(seed)
    y = rng.random(n) < 0.3
    x0 = np.clip(0.5 + 0.25 * np.where(y, 1, -1) + 0.15 * rng.normal(size=n), 0, 1)
    cols = [x0, rng.random(n), rng.random(n)]
    if constant:
        cols.append(np.full(n, 0.5))
    return make_matrix(np.column_stack(cols), y)


GBDT = {"n_rounds": 30, "max_depth": 3, "seed": 0}


def test_ablation_constant_feature_zero_delta():
    train, test = signal_fixture(300, 1, True), signal_fixture(200, 2, True)
    res = ablation_study(train, test, GBDT, SmoteParams(), repeats=3, seed=5)
    assert res.deltas["f3"] == [0.0, 0.0, 0.0]
    assert all(len(res.deltas[f]) == 3 for f in res.features)


def test_ablation_single_driver():
    train, test = signal_fixture(400, 3), signal_fixture(300, 4)
    res = ablation_study(train, test, GBDT, SmoteParams(), repeats=10, seed=6)
    s = res.summary()
    assert s["f0"]["median"] > 0.1
    assert s["f0"]["n"] == 10
    assert abs(s["f1"]["median"]) < 0.1


def test_ablation_stream_pairing_and_worker_independence():
    train, test = signal_fixture(200, 5), signal_fixture(100, 6)
    a = ablation_study(train, test, GBDT, SmoteParams(), repeats=3, seed=7, workers=1)
    b = ablation_study(train, test, GBDT, SmoteParams(), repeats=3, seed=7, workers=4)
    assert a == b
    for r in range(3):
        fps = {a.streams[(f, r)] for f in ("",) + a.features}
        assert fps == {stream_fingerprint(repeat_seed(7, r), "smote")}
    assert len({a.streams[("", r)] for r in range(3)}) == 3


def test_ablation_records_failures(monkeypatch, tmp_path):
    real = ablation_mod.fit_model

    def flaky(kind, tr, params):
        if "f1" not in tr.feature_names:
            raise DataError("boom")
        return real(kind, tr, params)

    monkeypatch.setattr(ablation_mod, "fit_model", flaky)
    train, test = signal_fixture(200, 8), signal_fixture(100, 9)
    res = ablation_study(train, test, GBDT, SmoteParams(), repeats=2, seed=1)
    assert res.deltas["f1"] == [None, None]
    assert res.failures[("f1", 0)] == "boom"
    assert all(d is not None for d in res.deltas["f0"])
    assert res.summary()["f1"]["n"] == 0
    res.write_csv(tmp_path / "a.csv")
    rows = list(csv.DictReader(open(tmp_path / "a.csv")))
    assert len(rows) == 3 * 2
    assert [r["status"] for r in rows if r["feature"] == "f1"] == ["failed: boom"] * 2


def test_ablation_errors():
    m = signal_fixture(50, 1)
    with pytest.raises(DataError):
        ablation_study(m.select(["f0"]), m.select(["f0"]), GBDT)
    with pytest.raises(DataError):
        ablation_study(m, m.select(["f1", "f0", "f2"]), GBDT)
