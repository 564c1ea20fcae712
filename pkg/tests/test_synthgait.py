import dataclasses

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from walkmode import synthgait as sg
from walkmode.core import SAMPLE_RATE_HZ, WalkingMode

SA, LG, SD = WalkingMode.SA, WalkingMode.LG, WalkingMode.SD


def quiet_profile(**kw):
    base = dict(
        user_id=0,
        cadence_hz=(0.75, 0.9, 0.8),
        mean_angle_deg=(22.0, 12.0, 9.0),
        amplitude_deg=(26.0, 21.0, 17.0),
        noise_std_deg=0.0,
        drift_deg_per_s=0.0,
        anticipation_s=0.0,
    )
    base.update(kw)
    return sg.UserProfile(**base)


def test_generation_is_deterministic():
    p = sg.default_cohort(1, 3)[0]
    plan = sg.protocol_plans()[0]
    a = sg.generate_sequence(p, plan, seed=11)
    b = sg.generate_sequence(p, plan, seed=11)
    assert a.equals(b)
    c = sg.generate_sequence(p, plan, seed=12)
    assert not np.array_equal(a.angles, c.angles)


def test_noise_free_single_mode_has_exact_excursion():
    p = quiet_profile()
    seq = sg.generate_sequence(p, sg.SequencePlan(((LG, 20.0),)))
    stride = int(round(SAMPLE_RATE_HZ / p.cadence_hz[LG]))
    left = seq.angles[:, 0]
    # the first sample sits on the peak; a stride later the cycle has passed its trough
    span = left[: stride + 1]
    assert abs(span.max() - left[0]) < 1e-9
    assert abs(left[0] - (p.mean_angle_deg[LG] + p.amplitude_deg[LG])) < 1e-9
    # trough reached exactly where the stance ends, if that lands on a sample
    p2 = quiet_profile(cadence_hz=(0.75, 1.0, 0.8))
    left2 = sg.generate_sequence(p2, sg.SequencePlan(((LG, 10.0),))).angles[:, 0]
    per_stride = left2[:30]
    assert abs(per_stride.max() - per_stride.min() - 2 * p2.amplitude_deg[LG]) < 1e-9


def test_symmetric_swing_gives_pure_sinusoid():
    p = quiet_profile(swing_fraction=0.5)
    seq = sg.generate_sequence(p, sg.SequencePlan(((SA, 8.0),)))
    t = np.arange(len(seq)) / SAMPLE_RATE_HZ
    expected = p.mean_angle_deg[SA] + p.amplitude_deg[SA] * np.cos(2 * np.pi * p.cadence_hz[SA] * t)
    np.testing.assert_allclose(seq.angles[:, 0], expected, atol=1e-9)


def test_stride_wave_extremes_and_swing_share():
    phase = np.linspace(0, 1, 10001)
    w = sg.stride_wave(phase, 0.4)
    assert w[0] == pytest.approx(1.0)
    assert phase[np.argmin(w)] == pytest.approx(0.6, abs=1e-3)
    assert w.max() <= 1.0 + 1e-12 and w.min() >= -1.0 - 1e-12


def test_anticipation_moves_mean_toward_next_mode():
    # equal amplitudes, so removing the ramp-free waveform leaves the mean track
    p = quiet_profile(anticipation_s=1.0, amplitude_deg=(20.0, 20.0, 17.0))
    plan = sg.SequencePlan(((LG, 10.0), (SA, 10.0)))
    ramped = sg.generate_sequence(p, plan).angles[:, 0]
    plain = sg.generate_sequence(dataclasses.replace(p, anticipation_s=0.0), plan).angles[:, 0]
    t = np.arange(len(ramped)) / SAMPLE_RATE_HZ
    last = (t >= 9.5) & (t < 10.0)
    mean_track = ramped[last] - plain[last] + p.mean_angle_deg[LG]
    assert p.mean_angle_deg[LG] < mean_track.mean() < p.mean_angle_deg[SA]
    np.testing.assert_array_equal(ramped[t < 9.0], plain[t < 9.0])


def test_profile_validation():
    with pytest.raises(sg.ProfileError):
        quiet_profile(cadence_hz=(0.0, 1.0, 1.0)).validate()
    with pytest.raises(sg.ProfileError):
        quiet_profile(amplitude_deg=(1.0, -1.0, 1.0)).validate()
    with pytest.raises(sg.ProfileError):
        quiet_profile(noise_std_deg=-0.1).validate()
    with pytest.raises(sg.ProfileError):
        quiet_profile(anticipation_s=2.5).validate()
    with pytest.raises(sg.ProfileError, match="degenerate"):
        quiet_profile(mean_angle_deg=(10.0, 12.0, 10.5), noise_std_deg=0.5).validate()


def test_cohort_counts_and_determinism():
    a = sg.default_cohort(5, 0)
    assert len(a) == 5 and len({p.user_id for p in a}) == 5
    assert all(p.validate() for p in a)
    assert a == sg.default_cohort(5, 0)
    b = sg.default_cohort(5, 1)
    for pa in a:
        for pb in b:
            assert pa.to_dict() != pb.to_dict()


def test_profile_dict_round_trip(tmp_path):
    profiles = sg.default_cohort(3, 7)
    sg.save_cohort(profiles, tmp_path / "c.json")
    assert sg.load_cohort(tmp_path / "c.json") == profiles


def test_standard_protocol_structure(cohort):
    assert cohort.sequence_count == 30
    for s in cohort:
        assert set(np.unique(s.labels)) == {SA, LG, SD}
    plan3 = sg.protocol_plans()[2]
    assert plan3.n_switches >= 6
    seq3 = cohort.for_user(0).sequences[2]
    assert np.count_nonzero(np.diff(seq3.labels)) >= 6
    assert [s.assist_on for s in cohort.for_user(0)] == [False] * 3 + [True] * 3


def test_label_balance(cohort):
    for u in cohort.user_ids:
        labels = np.concatenate([s.labels for s in cohort.for_user(u)])
        shares = np.bincount(labels, minlength=3) / len(labels)
        assert shares.min() >= 0.15, shares


def test_csv_round_trip(tmp_path):
    seq = sg.standard_protocol(sg.default_cohort(1, 0)[0])[1]
    path = tmp_path / sg.csv_filename(seq)
    sg.save_csv(seq, path)
    back = sg.load_csv(path)
    assert back.equals(seq, atol=5e-7)


def _write(path, text):
    path.write_text(text)
    return path


def test_csv_errors_name_the_row(tmp_path):
    good = "t,left_deg,right_deg,label\n0.0,1.0,2.0,SA\n"
    p = _write(tmp_path / "user0_seq1_off.csv", good + "0.033333,1.0,2.0,UP\n")
    with pytest.raises(sg.CsvFormatError, match="row 3"):
        sg.load_csv(p)
    with pytest.raises(sg.CsvFormatError, match="empty"):
        sg.load_csv(_write(tmp_path / "user0_seq2_off.csv", ""))
    with pytest.raises(sg.CsvFormatError, match="row 3"):
        sg.load_csv(_write(tmp_path / "user0_seq3_off.csv", good + "0.0,1.0,2.0,SA\n"))
    with pytest.raises(sg.CsvFormatError):
        sg.load_csv(_write(tmp_path / "bad_name.csv", good))


def test_dataset_dir(tmp_path):
    for s in sg.standard_protocol(sg.default_cohort(1, 0)[0]):
        sg.save_csv(s, tmp_path / sg.csv_filename(s))
    ds = sg.load_dataset_dir(tmp_path)
    assert ds.sequence_count == 6
    with pytest.raises(FileNotFoundError):
        sg.load_dataset_dir(tmp_path / "missing")


@given(st.integers(0, 2**31 - 1))
def test_generator_pure_in_seed(seed):
    p = sg.default_cohort(1, 0)[0]
    plan = sg.SequencePlan(((SD, 2.0), (LG, 2.0)))
    assert sg.generate_sequence(p, plan, seed=seed).equals(sg.generate_sequence(p, plan, seed=seed))
