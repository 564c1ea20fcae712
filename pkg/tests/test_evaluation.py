import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import auroc_pairs, wilcoxon_enumerate

from walkmode.core import Dataset, Sequence, WalkingMode
from walkmode.evaluation import (
    ProtocolError,
    ScoredSample,
    UndefinedMetricError,
    UndefinedTestError,
    WindowCurve,
    auroc_binary,
    auroc_multiclass,
    auroc_samples,
    confusion,
    current_time_auroc,
    leave_one_user_out,
    pick_delta,
    repeat_baseline_curve,
    summarize_runs,
    wilcoxon_signed_rank,
    window_curve,
)

SA, LG, SD = WalkingMode.SA, WalkingMode.LG, WalkingMode.SD


def test_auroc_examples():
    assert auroc_binary([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert auroc_binary([0.5] * 6, [0, 1] * 3) == 0.5
    assert auroc_binary([(0.9, True), (0.4, True), (0.5, False), (0.1, False)]) == 0.75
    with pytest.raises(UndefinedMetricError):
        auroc_binary([0.1, 0.2], [1, 1])


@given(
    st.lists(st.tuples(st.integers(0, 8), st.booleans()), min_size=2, max_size=200).filter(
        lambda xs: 0 < sum(p for _, p in xs) < len(xs)
    )
)
def test_auroc_matches_pair_counting(pairs):
    scores = [s / 4 for s, _ in pairs]
    pos = [p for _, p in pairs]
    assert abs(auroc_binary(scores, pos) - auroc_pairs(scores, pos)) <= 1e-12


@given(st.lists(st.integers(-40, 40), min_size=4, max_size=50), st.data())
def test_auroc_invariant_to_increasing_maps(ints, data):
    # a grid keeps the maps strictly increasing in floating point too
    scores = np.asarray(ints) / 8.0
    pos = data.draw(st.lists(st.booleans(), min_size=len(scores), max_size=len(scores)))
    if not 0 < sum(pos) < len(pos):
        return
    a = auroc_binary(scores, pos)
    assert a == auroc_binary(np.exp(scores), pos)
    assert a == auroc_binary(np.asarray(scores) * 3 + 1, pos)


def test_multiclass_examples():
    y = np.array([0, 1, 2, 0, 1, 2])
    assert auroc_multiclass(y, np.eye(3)[y]) == 1.0
    assert auroc_multiclass(y, np.full((6, 3), 1 / 3)) == 0.5
    with pytest.raises(UndefinedMetricError, match="SD"):
        auroc_multiclass([0, 1, 0], np.full((3, 3), 1 / 3))


def test_multiclass_six_sample_oracle():
    y = np.array([0, 0, 1, 1, 2, 2])
    p = np.array([[0.6, 0.3, 0.1], [0.3, 0.4, 0.3], [0.2, 0.5, 0.3], [0.5, 0.2, 0.3], [0.1, 0.1, 0.8], [0.3, 0.3, 0.4]])
    want = np.mean([auroc_pairs(p[:, c], y == c) for c in range(3)])
    assert auroc_multiclass(y, p) == pytest.approx(want, abs=1e-12)
    samples = [ScoredSample(WalkingMode(int(c)), tuple(r)) for c, r in zip(y, p)]
    assert auroc_samples(samples) == pytest.approx(want, abs=1e-12)


def test_confusion_examples():
    y = np.array([0, 1, 2, 2])
    cm = confusion(y, np.eye(3)[y])
    np.testing.assert_array_equal(cm.counts, np.diag([1, 1, 2]))
    one = confusion([SA], [[0.2, 0.7, 0.1]])
    assert one.counts[SA, LG] == 1 and one.total == 1
    rng = np.random.default_rng(0)
    yy = rng.integers(0, 3, 100)
    cm = confusion(yy, rng.dirichlet(np.ones(3), 100))
    np.testing.assert_array_equal(cm.counts.sum(axis=1), np.bincount(yy, minlength=3))
    assert "SA" in cm.format_table()


def test_confusion_ties_go_low():
    assert confusion([0], [[0.5, 0.5, 0.0]]).counts[0, 0] == 1


def test_pick_delta_rules():
    offsets = np.arange(-20, 21)
    v = np.full(41, 0.8)
    v[10] = 0.95  # offset -10
    assert pick_delta(WindowCurve(offsets, v)) == -10
    assert pick_delta(WindowCurve(offsets, np.full(41, 0.7))) == 0
    v = np.full(41, 0.8)
    v[17] = v[23] = 0.9  # -3 and +3
    assert pick_delta(WindowCurve(offsets, v)) == -3


def test_wilcoxon_examples():
    r = wilcoxon_signed_rank([0.1, 0.2, 0.3, 0.4, 0.5])
    assert r.p_value == 0.03125 and r.statistic == 15 and r.n == 5
    assert wilcoxon_signed_rank([0.7]).p_value == 0.5
    # +3, +1, -2: ranks 3, 1, 2; W+ = 4; patterns with W+ >= 4: {3,1},{3,2},{1,2,3},{1,3}... enumerate
    assert wilcoxon_signed_rank([3, 1, -2]).p_value == wilcoxon_enumerate([3, 1, -2]) == 3 / 8
    with pytest.raises(UndefinedTestError):
        wilcoxon_signed_rank([0.0, 0.0])
    with pytest.raises(ValueError):
        wilcoxon_signed_rank(np.ones(21))


@given(st.lists(st.integers(-4, 4), min_size=1, max_size=10))
def test_wilcoxon_matches_enumeration(diffs):
    if not any(diffs):
        return
    r = wilcoxon_signed_rank(diffs)
    assert r.p_value == pytest.approx(wilcoxon_enumerate(diffs), abs=1e-15)
    assert 0 < r.p_value <= 1


def test_run_summary():
    s = summarize_runs([1.0, 2.0, 3.0])
    assert s.mean == 2.0
    assert s.ci_half_width == pytest.approx(1.959963984540054 / np.sqrt(3))
    assert s.low < s.mean < s.high


class OracleModel:
    """Outputs the one-hot ground truth at every offset of every window."""

    def __init__(self, labels_by_seq, N=4, M=3):
        self.labels_by_seq, self.N, self.M = labels_by_seq, N, M
        self.warmup = M

    def predictions(self, seq):
        labels = self.labels_by_seq[seq.seq_index]
        ks = np.arange(self.M, len(seq))
        idx = np.clip(ks[:, None] + np.arange(-self.N, self.N + 1)[None], 0, len(seq) - 1)
        return np.eye(3)[labels[idx]]

    def current_probabilities(self, seq):
        return np.arange(self.M, len(seq)), self.predictions(seq)[:, self.N]


@pytest.fixture
def oracle_setup(monkeypatch):
    rng = np.random.default_rng(0)
    seqs, table = [], {}
    for i in range(3):
        labels = np.repeat(rng.permutation(3), 20)
        table[i] = labels
        seqs.append(Sequence(0, rng.normal(size=(60, 2)), labels, seq_index=i))
    model = OracleModel(table)
    import walkmode.tcn as tcn

    monkeypatch.setattr(tcn, "predict_sequence", lambda m, s: m.predictions(s))
    return model, Dataset(tuple(seqs))


def test_oracle_model_window_curve_is_perfect(oracle_setup):
    model, ds = oracle_setup
    curve = window_curve(model, ds)
    assert len(curve.offsets) == 2 * model.N + 1
    np.testing.assert_array_equal(curve.auroc, 1.0)
    assert curve.at(0) == current_time_auroc(model, ds)[0]
    assert -model.N <= pick_delta(curve) <= model.N


def test_repeat_baseline_on_single_mode_data(monkeypatch):
    rng = np.random.default_rng(1)
    table = {i: np.full(50, i) for i in range(3)}
    ds = Dataset(tuple(Sequence(0, rng.normal(size=(50, 2)), table[i], seq_index=i) for i in range(3)))
    model = OracleModel(table, N=5)
    import walkmode.tcn as tcn

    monkeypatch.setattr(tcn, "predict_sequence", lambda m, s: m.predictions(s))
    curve, rep = window_curve(model, ds), repeat_baseline_curve(model, ds, N=5)
    np.testing.assert_array_equal(rep.auroc, curve.auroc[5:])
    assert rep.at(0) == current_time_auroc(model, ds)[0]


def test_louo_never_trains_on_the_held_out_user():
    rng = np.random.default_rng(2)
    seqs = [Sequence(u, rng.normal(size=(40, 2)), np.repeat([0, 1, 2, 1], 10)) for u in range(4)]
    ds = Dataset(tuple(seqs))
    seen = []

    class Constant:
        warmup = 0

        def current_probabilities(self, seq):
            return np.arange(len(seq)), np.tile([0.2, 0.5, 0.3], (len(seq), 1))

    def trainer(train_set):
        seen.append(set(train_set.user_ids))
        return Constant()

    res = leave_one_user_out(ds, trainer)
    assert res.users == [0, 1, 2, 3] and len(res.values) == 4
    for u, users in zip(res.users, seen):
        assert u not in users
    assert res.mean == 0.5
    assert res.total_confusion.total == 160
    with pytest.raises(ProtocolError):
        leave_one_user_out(ds.for_user(0), trainer)
