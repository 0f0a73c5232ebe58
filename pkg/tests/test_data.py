from importlib import resources

import numpy as np
import pytest
from scipy.stats import norm

from gradtree.data import (
    TITANIC20,
    Column,
    DataError,
    Dataset,
    QuantileNormalTransformer,
    TabularPreprocessor,
    dataset_to_csv,
    features_from_csv,
    generate_titanic,
    load_csv,
    load_gtds,
    loo_apply,
    loo_fit,
    one_hot,
    quantile_apply,
    quantile_fit,
    quantile_inverse,
    save_gtds,
    split,
    titanic20,
)

BUNDLED = resources.files("gradtree") / "data" / "titanic20.csv"


def test_fixed_table_matches_source_rows():
    ds = titanic20()
    assert (ds.m, ds.n, ds.c) == (20, 2, 2)
    for row, (fare, age, label) in zip(ds.X, TITANIC20):
        assert ds.columns[0].categories[int(row[0])] == fare
        assert row[1] == age
    assert [ds.classes[k] for k in ds.y] == [r[2] for r in TITANIC20]
    assert ds.classes == ["No", "Yes"]
    assert ds.columns[0].categories == ["Low", "High"]


def test_bundled_csv_loads_and_matches():
    ds = load_csv(BUNDLED, "Survived")
    ref = titanic20()
    assert (ds.m, ds.n) == (20, 2)
    assert np.array_equal(ds.X, ref.X) and np.array_equal(ds.y, ref.y)
    assert BUNDLED.read_text(encoding="utf-8") == dataset_to_csv(ref)


def test_titanic_versions():
    num = titanic20("numeric")
    cat = titanic20("categorical")
    assert num.columns[0].kind == "numeric" and cat.columns[1].kind == "categorical"
    assert np.array_equal(num.y, titanic20().y)
    with pytest.raises(ValueError):
        titanic20("other")


def test_generator_ranges_and_determinism():
    for seed in range(5):
        ds = generate_titanic(200, seed, "numeric")
        assert np.all((ds.X[:, 0] >= 1) & (ds.X[:, 0] <= 250))
        assert np.all((ds.X[:, 1] >= 1) & (ds.X[:, 1] <= 90))
        assert len({tuple(r) for r in ds.X}) == 200
    a, b = generate_titanic(50, 9), generate_titanic(50, 9)
    assert dataset_to_csv(a) == dataset_to_csv(b)


def test_survival_rate_monte_carlo():
    ds = generate_titanic(10_000, 0, "numeric")
    fare, age = ds.X[:, 0], ds.X[:, 1]
    young_rich = (age <= 20) & (fare > 50)
    rate = ds.y[young_rich].mean()
    assert 0.55 <= rate <= 0.65
    assert 0.17 <= ds.y[~young_rich].mean() <= 0.23


def test_csv_errors(tmp_path):
    empty = tmp_path / "e.csv"
    empty.write_text("")
    with pytest.raises(DataError):
        load_csv(empty, "y")
    missing = tmp_path / "m.csv"
    missing.write_text("a,y\n1,\n")
    with pytest.raises(DataError):
        load_csv(missing, "y")
    ragged = tmp_path / "r.csv"
    ragged.write_text("a,y\n1\n")
    with pytest.raises(DataError):
        load_csv(ragged, "y")
    with pytest.raises(DataError):
        load_csv(BUNDLED, "nope")


def test_csv_labels_and_forced_categorical(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("code,size,label\n3,1.5,cat\n1,2.5,dog\n3,0.5,bird\n")
    ds = load_csv(p, "label", categorical_cols=["code"])
    assert ds.classes == ["bird", "cat", "dog"]
    assert list(ds.y) == [1, 2, 0]
    assert ds.columns[0].kind == "categorical" and ds.columns[0].categories == ["3", "1"]
    X, labels = features_from_csv(p, ds.columns, "label")
    assert np.array_equal(X, ds.X) and labels == ["cat", "dog", "bird"]
    p2 = tmp_path / "n.csv"
    p2.write_text("code,size\n7,1.0\n")
    X, labels = features_from_csv(p2, ds.columns, "label")
    assert X[0, 0] == -1 and labels is None


def test_gtds_round_trip(tmp_path):
    ds = titanic20()
    save_gtds(ds, tmp_path / "t.gtds")
    back = load_gtds(tmp_path / "t.gtds")
    assert np.array_equal(back.X, ds.X) and np.array_equal(back.y, ds.y)
    assert back.columns == ds.columns and back.classes == ds.classes
    blob = (tmp_path / "t.gtds").read_bytes()
    assert blob[:5] == b"GTDS1"
    (tmp_path / "bad.gtds").write_bytes(blob[:40])
    with pytest.raises(DataError):
        load_gtds(tmp_path / "bad.gtds")


def test_split_rules():
    y = np.array([0, 1] * 50)
    tr, te = split(y, (0.8, 0.2), seed=1)
    assert (len(tr), len(te)) == (80, 20)
    assert len(np.union1d(tr, te)) == 100
    assert y[tr].sum() == 40 and y[te].sum() == 10
    a = split(y, (0.5, 0.5), seed=3)
    b = split(y, (0.5, 0.5), seed=3)
    assert all(np.array_equal(p, q) for p, q in zip(a, b))
    assert y[a[0]].mean() == 0.5
    with pytest.raises(ValueError):
        split(y, (0.5, 0.6))


def test_quantile_examples():
    vals = np.arange(1.0, 1001.0)
    refs, scores = quantile_fit(vals)
    assert abs(quantile_apply(np.array([500.5]), refs, scores)[0]) < 1e-6
    odd = np.arange(1.0, 102.0)
    r2, s2 = quantile_fit(odd)
    assert abs(quantile_apply(np.array([51.0]), r2, s2)[0]) < 1e-6
    low = quantile_apply(np.array([1.0]), refs, scores)[0]
    assert np.isfinite(low) and low < -3 and low >= norm.ppf(1e-7)
    assert np.all(np.diff(scores) > 0)
    back = quantile_inverse(quantile_apply(np.array([10.0, 700.0]), refs, scores), refs, scores)
    assert np.allclose(back, [10.0, 700.0])


def test_quantile_ties_and_constant():
    refs, scores = quantile_fit(np.array([1.0, 1.0, 2.0, 3.0]))
    raw = norm.ppf((np.arange(4) + 0.5) / 4)
    assert np.allclose(scores, [raw[:2].mean(), raw[2], raw[3]])
    refs, scores = quantile_fit(np.full(5, 7.0))
    assert np.all(quantile_apply(np.array([1.0, 7.0, 9.0]), refs, scores) == 0.0)


def test_quantile_normality():
    x = np.random.default_rng(0).exponential(size=5000)
    t = QuantileNormalTransformer().fit(x[:, None]).transform(x[:, None])[:, 0]
    for q in (10, 50, 90):
        assert abs(np.percentile(t, q) - norm.ppf(q / 100)) < 0.15


def test_loo_examples():
    codes = np.array([0, 0, 0, 1, 2, 2])
    y = np.array([1, 0, 1, 1, 0, 1])
    train, state = loo_fit(codes, y)
    assert train[0, 0] == 0.5  # (0 + 1) / 2
    assert train[1, 0] == 1.0
    assert train[3, 0] == pytest.approx(y.mean())  # singleton -> global mean
    assert loo_apply(np.array([5]), state)[0, 0] == pytest.approx(y.mean())
    assert loo_apply(np.array([0]), state)[0, 0] == pytest.approx(2 / 3)


def test_loo_multiclass_and_convergence():
    rng = np.random.default_rng(1)
    codes = rng.integers(0, 3, size=3000)
    y = rng.integers(0, 3, size=3000)
    train, state = loo_fit(codes, y)
    assert train.shape == (3000, 3)
    applied = loo_apply(codes, state)
    assert np.max(np.abs(train - applied)) < 1e-2


def test_one_hot_rules():
    assert one_hot(np.array([0, 1, 1]), 2).tolist() == [[1, 0], [0, 1], [0, 1]]
    assert one_hot(np.zeros(3), 1).tolist() == [[1], [1], [1]]


def test_preprocessor_routing():
    cols = [Column("two", "categorical", ["a", "b"]),
            Column("five", "categorical", list("abcde")),
            Column("many", "categorical", [str(i) for i in range(11)]),
            Column("one", "categorical", ["z"]),
            Column("num")]
    rng = np.random.default_rng(2)
    X = np.c_[rng.integers(0, 2, 60), rng.integers(0, 5, 60), rng.integers(0, 11, 60),
              np.zeros(60), rng.normal(size=60)]
    y = rng.integers(0, 2, 60)
    pre = TabularPreprocessor(cols)
    out = pre.fit_transform(X, y)
    kinds = [c["kind"] for c in pre.output_columns()]
    assert kinds == ["binary"] + ["onehot"] * 5 + ["loo", "onehot", "numeric"]
    assert out.shape == (60, 9)
    assert np.array_equal(out[:, 0], X[:, 0])
    assert np.all(out[:, 7] == 1.0)
    assert list(pre.get_feature_names_out())[:2] == ["two=b", "five=a"]
    same = TabularPreprocessor.from_state(pre.to_state()).transform(X)
    assert np.array_equal(pre.transform(X), same)


def test_preprocessor_has_no_label_leakage():
    ds = titanic20()
    cols = ds.columns + [Column("cat", "categorical", [str(i) for i in range(12)])]
    rng = np.random.default_rng(3)
    X = np.c_[ds.X, rng.integers(0, 12, 20)]
    pre = TabularPreprocessor(cols).fit(X, ds.y)
    test = np.c_[ds.X[:5], rng.integers(0, 12, 5)]
    before = pre.transform(test)
    # transform never sees labels, so any shuffling of test labels is irrelevant
    assert np.array_equal(before, pre.transform(test.copy()))


def test_raw_threshold_inverts_quantile():
    ds = titanic20()
    pre = TabularPreprocessor(ds.columns)
    out = pre.fit_transform(ds.X, ds.y)
    tau = np.sort(out[:, 1])[5]
    raw = pre.raw_threshold(1, tau)
    assert raw == np.sort(ds.X[:, 1])[5]
    assert pre.raw_threshold(0, 0.5) == 0.5
    assert pre.raw_threshold(0, 0.1266) == 0.5
    assert pre.raw_threshold(0, -0.2) == -0.2


def test_dataset_validation():
    with pytest.raises(DataError):
        Dataset(np.zeros((3, 2)), np.zeros(2), [Column("a"), Column("b")], ["x"])
    with pytest.raises(DataError):
        Dataset(np.zeros((2, 2)), np.zeros(2), [Column("a")], ["x"])
