import numpy as np
import pandas as pd
import pytest

from dtgan import evaluation as ev
from dtgan.tabular import infer_schema
from oracles import jsd_base2, transport_cost_bruteforce


def _table(n=400, seed=0):
    rng = np.random.default_rng(seed)
    c = rng.choice(["a", "b", "c"], n)
    x = rng.normal(size=n) + (c == "a")
    z = 2 * x + rng.normal(size=n)
    y = (x > 0.3).astype(int)
    return pd.DataFrame({"x": x, "z": z, "c": c, "y": [str(v) for v in y]})


def _schema(df):
    return infer_schema(df.astype(str), "y")


def test_jsd_hand_case():
    assert jsd_base2([0.5, 0.5], [0.25, 0.75]) == pytest.approx(0.048795, abs=1e-6)
    assert ev._jsd([0.5, 0.5], [0.25, 0.75]) == pytest.approx(0.048795, abs=1e-6)


def test_jsd_extremes_and_symmetry():
    a = pd.DataFrame({"k": ["p"] * 5, "y": ["0", "1", "0", "1", "0"]})
    b = pd.DataFrame({"k": ["q"] * 5, "y": ["0", "1", "0", "1", "0"]})
    s = infer_schema(pd.concat([a, b]), "y")
    assert ev.column_jsd(a["k"], b["k"]) == pytest.approx(1.0)
    assert ev.avg_jsd(a, a, s) == 0
    df = _table()
    other = _table(seed=1)
    s = _schema(pd.concat([df, other]))
    assert ev.avg_jsd(df, other, s) == pytest.approx(ev.avg_jsd(other, df, s), abs=1e-15)
    assert 0 <= ev.avg_jsd(df, other, s) <= 1


def test_jsd_matches_oracle_on_random_columns():
    rng = np.random.default_rng(3)
    for _ in range(10):
        a = pd.Series(rng.choice(list("uvwx"), 50))
        b = pd.Series(rng.choice(list("uvwxy"), 70))
        cats = sorted(set(a) | set(b))
        p = [np.mean(a == c) for c in cats]
        q = [np.mean(b == c) for c in cats]
        assert ev.column_jsd(a, b) == pytest.approx(jsd_base2(p, q), abs=1e-12)


def test_wd_cases():
    assert ev.column_wd([0, 0], [1, 1]) == pytest.approx(1.0)
    assert ev.column_wd([3.0, 1.0, 2.0], [1.0, 2.0, 3.0]) == 0.0
    assert ev.column_wd([5.0, 5.0], [5.0]) == 0.0


def test_wd_matches_bruteforce_transport():
    rng = np.random.default_rng(4)
    for n in range(1, 9):
        a, b = rng.normal(size=n), rng.normal(1, 2, size=n)
        lo = min(a.min(), b.min())
        span = max(a.max(), b.max()) - lo
        ref = transport_cost_bruteforce((a - lo) / span, (b - lo) / span)
        assert ev.column_wd(a, b) == pytest.approx(ref, abs=1e-9)


def test_wd_triangle_inequality():
    # on a common scale (no renormalization between pairs)
    rng = np.random.default_rng(5)
    a, b, c = rng.random(20), rng.random(20) ** 2, rng.random(20) ** 0.5
    lo, hi = 0.0, 1.0
    assert ev.column_wd(np.r_[a, lo, hi], np.r_[c, lo, hi]) <= \
        ev.column_wd(np.r_[a, lo, hi], np.r_[b, lo, hi]) + ev.column_wd(np.r_[b, lo, hi], np.r_[c, lo, hi]) + 1e-12


def test_wd_translation_invariant_after_scaling():
    rng = np.random.default_rng(6)
    a, b = rng.normal(size=30), rng.normal(size=25)
    assert ev.column_wd(a + 100, b + 100) == pytest.approx(ev.column_wd(a, b), rel=1e-9)


def test_absent_metrics():
    df = pd.DataFrame({"c": ["a", "b"] * 5, "y": ["0", "1"] * 5})
    s = infer_schema(df, "y")
    assert ev.avg_wd(df, df, s) is None
    with pytest.raises(ValueError):
        ev.avg_jsd(df.head(0), df, s)


def test_theils_u():
    x = np.random.default_rng(7).choice(list("abc"), 10_000)
    assert ev.theils_u(x, x) == pytest.approx(1.0)
    y = np.random.default_rng(8).choice(list("de"), 10_000)
    assert ev.theils_u(x, y) < 0.05
    assert ev.theils_u(["a"] * 10, list("ababababab")) == 0.0


def test_theils_u_asymmetric_hand_case():
    # y determines x fully, x only partly determines y
    y = ["1", "2", "3", "4"] * 25
    x = ["lo", "lo", "hi", "hi"] * 25
    assert ev.theils_u(x, y) == pytest.approx(1.0)
    assert ev.theils_u(y, x) == pytest.approx(0.5)


def test_correlation_ratio_and_pearson():
    assert ev.correlation_ratio(["a", "a", "b", "b"], [1.0, 1.0, 3.0, 3.0]) == pytest.approx(1.0)
    assert ev.correlation_ratio(["a", "b"] * 50, [2.0] * 100) == 0.0
    v = np.arange(10.0)
    assert ev.pearson(v, 3 * v + 1) == pytest.approx(1.0)
    assert ev.pearson(v, -v) == pytest.approx(-1.0)
    assert ev.pearson(v, np.ones(10)) == 0.0


def test_diff_corr():
    df = _table()
    s = _schema(df)
    assert ev.diff_corr(df, df, s) == 0.0
    m = ev.association_matrix(df, s)
    assert np.all(np.diag(m) == 1)
    shuffled = df.copy()
    shuffled["z"] = np.random.default_rng(0).permutation(df["z"].to_numpy())
    assert ev.diff_corr(df, shuffled, s) > 0.5


def test_similarity_report():
    df = _table()
    r = ev.similarity(df, df, _schema(df))
    assert r.avg_jsd == 0 and r.avg_wd == 0 and r.diff_corr == 0
    assert r.to_dict()["continuous_columns"] == ["x", "z"]


# -- utility -----------------------------------------------------------------

def test_apr_definition():
    y = np.array([0, 0, 1, 1, 0, 1, 0, 0])
    perfect = np.stack([1 - y, y], axis=1).astype(float)
    assert ev.scores(y, perfect, 2)["apr"] == 1.0
    const = np.full((8, 2), 0.5)
    assert ev.scores(y, const, 2)["apr"] == pytest.approx(y.mean())


@pytest.mark.parametrize("name", ev.MODELS)
def test_models_fit_separable_data(name):
    rng = np.random.default_rng(9)
    x = rng.random((300, 3))
    y = (x[:, 0] + x[:, 1] > 1).astype(int)
    x[y == 1, 0] += 0.3
    model = ev.make_model(name, 0).fit(x, y, 2)
    assert np.mean(model.predict_proba(x).argmax(1) == y) >= 0.95


def test_single_class_training_is_reported():
    model = ev.make_model("decision_tree").fit(np.zeros((5, 2)), np.zeros(5, int), 3)
    p = model.predict_proba(np.ones((2, 2)))
    assert p.shape == (2, 3) and np.all(p[:, 0] == 1)


def test_utility_same_data_gives_zero_differences():
    df = _table()
    s = _schema(df)
    r = ev.ml_utility(df.iloc[:300], df.iloc[300:], df.iloc[:300], s, seed=1)
    for m in ev.MODELS:
        assert all(v == 0 for v in r.differences[m].values())
    assert set(r.average) == set(ev.METRICS)


def test_utility_shuffled_labels():
    df = _table(600)
    s = _schema(df)
    train, test = df.iloc[:400], df.iloc[400:]
    synth = train.copy()
    synth["y"] = np.random.default_rng(2).permutation(train["y"].to_numpy())
    r = ev.ml_utility(train, test, synth, s, models=("logistic_regression",))
    majority = max(test["y"].value_counts(normalize=True))
    expected = r.real["logistic_regression"]["accuracy"] - majority
    assert r.differences["logistic_regression"]["accuracy"] == pytest.approx(expected, abs=0.1)
    assert r.differences["logistic_regression"]["accuracy"] > 0.1


def test_utility_multiclass_and_determinism():
    df = _table()
    df["y"] = df["c"]
    df = df.drop(columns="c")
    s = _schema(df)
    a = ev.ml_utility(df.iloc[:300], df.iloc[300:], df.iloc[100:400], s, seed=3)
    b = ev.ml_utility(df.iloc[:300], df.iloc[300:], df.iloc[100:400], s, seed=3)
    assert a == b
    assert all(-1 <= a.differences[m]["accuracy"] <= 1 for m in ev.MODELS)
