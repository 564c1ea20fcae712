import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import gini_gain_oracle

from walkmode.baseline_rf import (
    N_FEATURES,
    DecisionTree,
    RfConfig,
    RfModel,
    best_split,
    build_tree,
    fit_forest,
    load_forest,
    rf_features,
    rf_predict,
    rf_train,
    save_forest,
    sequence_features,
)
from walkmode.core import Sequence, WarmupError
from walkmode import synthgait as sg


def test_constant_window_features():
    seq = Sequence(0, np.full((60, 2), 7.0), None)
    f = rf_features(seq, 59)
    np.testing.assert_array_equal(f[:5], [7, 7, 7, 7, 7])
    assert f[5] == 0.0


def test_ramp_window_features():
    ramp = np.arange(60, dtype=float)
    seq = Sequence(0, np.stack([ramp, np.zeros(60)], axis=1), None)
    first, last, lo, hi, mean, std = rf_features(seq, 59)[:6]
    assert (first, last, lo, hi, mean) == (0, 59, 0, 59, 29.5)
    # population variance of 0..n-1 is (n^2 - 1) / 12
    assert std == pytest.approx(np.sqrt((60**2 - 1) / 12), abs=1e-12)
    assert std == pytest.approx(17.3181, abs=1e-4)


def test_feature_warmup_and_batch_agreement(rng):
    seq = Sequence(0, rng.normal(size=(90, 2)), None)
    with pytest.raises(WarmupError):
        rf_features(seq, 58)
    batch = sequence_features(seq)
    assert batch.shape == (31, N_FEATURES)
    for k in (59, 75, 89):
        np.testing.assert_allclose(batch[k - 59], rf_features(seq, k), rtol=0, atol=1e-12)


def _random_node(rng, n, n_features=3, n_values=6):
    X = rng.integers(0, n_values, size=(n, n_features)).astype(float)
    y = rng.integers(0, 3, size=n)
    return X, y


@given(st.integers(0, 10**6), st.integers(2, 60), st.integers(1, 5))
def test_split_search_matches_exhaustive_oracle(seed, n, min_leaf):
    rng = np.random.default_rng(seed)
    X, y = _random_node(rng, n)
    got = best_split(X, y, [0, 1, 2], min_leaf)
    want = gini_gain_oracle(X, y, [0, 1, 2], min_leaf)
    if want is None:
        assert got is None
        return
    assert got is not None
    assert got[2] == pytest.approx(want[2], abs=1e-9)
    assert (got[0], got[1]) == (want[0], want[1])


def test_split_search_on_200_samples(rng):
    for _ in range(5):
        X = rng.normal(size=(200, 4)).round(1)
        y = rng.integers(0, 3, size=200)
        got = best_split(X, y, [0, 1, 2, 3], 5)
        want = gini_gain_oracle(X, y, [0, 1, 2, 3], 5)
        assert got[2] == pytest.approx(want[2], abs=1e-9)
        assert (got[0], got[1]) == (want[0], want[1])


@given(st.integers(0, 10**6))
def test_split_invariant_under_monotone_transform(seed):
    rng = np.random.default_rng(seed)
    X, y = _random_node(rng, 40)
    f0, thr0, s0 = best_split(X, y, [0, 1, 2], 1) or (None, None, None)
    Xt = np.exp(X)  # strictly increasing
    got = best_split(Xt, y, [0, 1, 2], 1)
    if f0 is None:
        assert got is None
        return
    assert got[0] == f0 and got[2] == pytest.approx(s0, abs=1e-12)
    # the same samples go left
    np.testing.assert_array_equal(X[:, f0] <= thr0, Xt[:, f0] <= got[1])


def test_single_class_leaves():
    X = np.random.default_rng(0).normal(size=(50, N_FEATURES))
    forest = fit_forest(X, np.full(50, 2), RfConfig(n_trees=3))
    np.testing.assert_array_equal(forest.predict_proba(X), np.tile([0, 0, 1.0], (50, 1)))


def test_separable_clusters_fit_perfectly():
    rng = np.random.default_rng(1)
    X = np.concatenate([rng.normal(-5, 1, size=(60, N_FEATURES)), rng.normal(5, 1, size=(60, N_FEATURES))])
    y = np.array([0] * 60 + [2] * 60)
    tree = build_tree(X, y, RfConfig(min_samples_leaf=1), np.random.default_rng(0))
    assert np.all(np.argmax(tree.predict_proba(X), axis=1) == y)
    forest = fit_forest(X, y, RfConfig(n_trees=5))
    assert np.all(np.argmax(forest.predict_proba(X), axis=1) == y)


def _stub(leaf):
    return DecisionTree(
        np.array([-1]), np.array([0.0]), np.array([-1]), np.array([-1]), np.array([leaf], dtype=float)
    )


def test_forest_averages_trees():
    x = np.zeros(N_FEATURES)
    same = RfModel(RfConfig(n_trees=2), [_stub([1, 0, 0]), _stub([1, 0, 0])])
    np.testing.assert_array_equal(rf_predict(same, x), [1, 0, 0])
    mixed = RfModel(RfConfig(n_trees=2), [_stub([1, 0, 0]), _stub([0, 1, 0])])
    np.testing.assert_array_equal(rf_predict(mixed, x), [0.5, 0.5, 0])


def test_forest_determinism_and_persistence(tmp_path):
    ds = sg.standard_dataset(1, 2)
    cfg = RfConfig(n_trees=4, max_depth=6, seed=5)
    a = rf_train(ds, cfg)
    b = rf_train(ds, cfg)
    X = sequence_features(ds.sequences[0])
    assert np.array_equal(a.predict_proba(X), b.predict_proba(X))
    np.testing.assert_allclose(a.predict_proba(X).sum(axis=1), 1.0, atol=1e-9)
    save_forest(a, tmp_path / "f.bin")
    back = load_forest(tmp_path / "f.bin")
    assert np.array_equal(back.predict_proba(X), a.predict_proba(X))
    raw = (tmp_path / "f.bin").read_bytes()
    (tmp_path / "t.bin").write_bytes(raw[:-8])
    with pytest.raises(ValueError):
        load_forest(tmp_path / "t.bin")
