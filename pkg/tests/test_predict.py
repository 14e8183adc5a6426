import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cogdiag import ConfigError
from cogdiag.core.rng import derive_rng
from cogdiag.esve import esve_batch
from cogdiag.predict import (
    SlipGuessTable,
    deficiency,
    estimate_sd,
    estimate_si,
    estimate_table,
    ideal_matrix,
    ideal_response,
    predict_all,
    predict_cell,
    predict_matrix,
)
from cogdiag.synth import GenerativeSpec, generate

from .conftest import random_instance


@pytest.mark.parametrize(
    "profile,qvec,expected", [([1, 1, 0], [1, 0, 0], 1), ([0, 0, 1], [1, 1, 1], 0), ([0, 1, 0], [0, 0, 0], 1)]
)
def test_ideal_response(profile, qvec, expected):
    assert ideal_response(profile, qvec) == expected


@pytest.mark.parametrize("profile,qvec,expected", [([0, 0, 1], [1, 1, 1], 2), ([1, 1, 0], [1, 0, 0], 0), ([0] * 8, [1] * 8, 8)])
def test_deficiency(profile, qvec, expected):
    assert deficiency(profile, qvec) == expected


def test_length_mismatch():
    with pytest.raises(ValueError):
        ideal_response([1, 0], [1, 0, 0])


def _one_question_table(slip_num, slip_den, guess_num=0, guess_den=10):
    return SlipGuessTable("SI", np.array([slip_num], float), np.array([slip_den], float), np.array([guess_num], float), np.array([guess_den], float))


def test_si_counts_definitional():
    # question filtered from the wrong set for 3 of 10 examinees
    profiles = np.ones((10, 1), dtype=np.int8)
    Q = np.array([[1]], dtype=np.int8)
    seen = np.ones((10, 1), bool)
    slipped = np.zeros((10, 1), bool)
    slipped[:3] = True
    t = estimate_table(profiles, Q, seen, slipped, np.zeros_like(slipped), "SI")
    assert t.si_slip[0] == pytest.approx(0.3)


def test_no_filtering_gives_zero_rates():
    X, Q, _ = random_instance(np.random.default_rng(0), max_s=50, max_m=10, max_k=4)
    batch = esve_batch(X, Q, rng=derive_rng(0))
    t = estimate_si(batch, Q)
    assert (t.si_slip == 0).all() and (t.si_guess == 0).all()


def test_predict_cell_substitution():
    t = SlipGuessTable.from_rates([0.2], [0.0])
    assert predict_cell([1, 1], [1, 0], t, 0) == pytest.approx(0.8)
    assert predict_cell([0, 1], [1, 0], t, 0) == 0.0


def test_sd_empty_bucket_backs_off_to_si():
    profiles = np.array([[1, 1], [1, 1], [1, 1]], dtype=np.int8)
    Q = np.array([[1, 0]], dtype=np.int8)
    seen = np.ones((3, 1), bool)
    slipped = np.array([[True], [False], [False]])
    t = estimate_table(profiles, Q, seen, slipped, np.zeros_like(slipped), "SD")
    # every examinee has level 2: that bucket equals SI, the others are empty
    assert t.sd_slip[0, 2] == pytest.approx(t.si_slip[0])
    assert np.isnan(t.sd_slip[0, 0]) and np.isnan(t.sd_slip[0, 1])
    # a level-1 student hits the empty bucket and gets the SI prediction
    assert predict_cell([1, 0], [1, 0], t, 0) == predict_cell([1, 0], [1, 0], t.with_mode("SI"), 0)


def test_si_zero_denominator_uses_global_mean():
    t = SlipGuessTable("SI", np.array([1.0, 0.0]), np.array([4.0, 0.0]), np.array([0.0, 0.0]), np.array([4.0, 0.0]))
    assert t.si_slip.tolist() == [0.25, 0.25]


def test_smoothing_knob():
    t = _one_question_table(1, 2)
    assert t.si_slip[0] == 0.5
    smoothed = SlipGuessTable("SI", t.slip_num, t.slip_den, t.guess_num, t.guess_den, smoothing=2.0)
    assert 0.0 < smoothed.si_slip[0] <= 0.5


def test_table_json_round_trip():
    X, Q, _ = random_instance(np.random.default_rng(5), max_s=60, max_m=10, max_k=4, s=0.2, g=0.2)
    t = estimate_sd(esve_batch(X, Q, rng=derive_rng(1)), Q)
    t2 = SlipGuessTable.from_dict(t.to_dict())
    np.testing.assert_array_equal(t.sd_slip_den, t2.sd_slip_den)
    np.testing.assert_array_equal(predict_matrix(np.ones((2, Q.shape[1]), np.int8), Q, t), predict_matrix(np.ones((2, Q.shape[1]), np.int8), Q, t2))


def test_predict_all_empty_and_fallback():
    t = SlipGuessTable.from_rates([0.1, 0.2], [0.3, 0.4])
    Q = np.eye(2, dtype=np.int8)
    assert predict_all(np.ones((2, 2), np.int8), Q, t, np.zeros((0, 2), int)).shape == (0,)
    probs, flags = predict_all(
        np.ones((2, 2), np.int8), Q, t, [[0, 0], [1, 1]], has_data=[True, False], fallback=[0.5, 0.7], return_flags=True
    )
    assert probs.tolist() == [pytest.approx(0.9), 0.7] and flags.tolist() == [False, True]


def test_predict_all_unknown_question():
    t = SlipGuessTable.from_rates([0.1], [0.1])
    with pytest.raises(IndexError):
        predict_all(np.ones((1, 1), np.int8), np.ones((1, 1), np.int8), t, [[0, 3]])


def test_noise_free_predictions_match_truth():
    d = generate(GenerativeSpec(100, 12, 4, slip=0.0, guess=0.0, seed=8))
    X, Q = d.responses.values, d.q.entries
    batch = esve_batch(X, Q, rng=derive_rng(0))
    for table in (estimate_si(batch, Q), estimate_sd(batch, Q)):
        probs = predict_matrix(batch.profiles, Q, table)
        assert set(np.unique(probs)) <= {0.0, 1.0}
        np.testing.assert_array_equal(probs, X)


def _truth_table(d, mode):
    # counts taken from the generative profiles and the actual noise events
    X, Q, xi = d.responses.values, d.q.entries, d.ideal
    return estimate_table(d.profiles, Q, ~np.isnan(X), (X == 0) & xi, (X == 1) & ~xi, mode)


def test_si_recovers_uniform_slip():
    d = generate(GenerativeSpec(1000, 12, 3, slip=0.1, guess=0.1, seed=21))
    X, Q = d.responses.values, d.q.entries
    t = estimate_si(esve_batch(X, Q, rng=derive_rng(0)), Q)
    assert np.all(np.abs(t.si_slip - 0.1) <= 0.05), np.round(t.si_slip, 3)


def test_si_mean_slip_recovered_by_esve():
    d = generate(GenerativeSpec(1000, 12, 3, slip=0.1, guess=0.1, seed=21))
    X, Q = d.responses.values, d.q.entries
    t = estimate_si(esve_batch(X, Q, rng=derive_rng(0)), Q)
    assert abs(t.si_slip.mean() - 0.1) <= 0.03
    assert abs(t.si_guess.mean() - 0.1) <= 0.03


def test_si_counting_recovers_uniform_slip_from_true_profiles():
    d = generate(GenerativeSpec(1000, 12, 3, slip=0.1, guess=0.1, seed=21))
    t = _truth_table(d, "SI")
    assert np.all(np.abs(t.si_slip - 0.1) <= 0.05)
    assert np.all(np.abs(t.si_guess - 0.1) <= 0.05)


# buckets below 200 examinees have a binomial standard error above 0.024,
# so a 0.05 band would reject an exact estimator by chance
_SD_FLOOR = 200


def test_sd_recovers_level_dependent_slip():
    # s(level) = 0.05 + 0.02 * level, guesses off so slips are the only noise
    d = generate(GenerativeSpec(2000, 15, 4, slip=(0.05, 0.02), guess=0.0, seed=3))
    X, Q = d.responses.values, d.q.entries
    t = estimate_sd(esve_batch(X, Q, rng=derive_rng(0)), Q)
    truth = 0.05 + 0.02 * np.arange(5)
    populated = t.sd_slip_den >= _SD_FLOOR
    gaps = np.abs(t.sd_slip - truth[None, :])[populated]
    assert gaps.size > 0 and gaps.max() <= 0.05, np.round(gaps, 3)


def test_sd_counting_recovers_level_dependent_slip_from_true_profiles():
    truth = 0.05 + 0.02 * np.arange(5)
    for seed in (3, 4, 5):
        d = generate(GenerativeSpec(2000, 15, 4, slip=(0.05, 0.02), guess=0.0, seed=seed))
        t = _truth_table(d, "SD")
        populated = t.sd_slip_den >= _SD_FLOOR
        assert populated.sum() >= 10
        assert np.abs(t.sd_slip - truth[None, :])[populated].max() <= 0.05


def test_sd_pooled_levels_track_the_slip_curve():
    d = generate(GenerativeSpec(2000, 15, 4, slip=(0.05, 0.02), guess=0.0, seed=3))
    X, Q = d.responses.values, d.q.entries
    t = estimate_sd(esve_batch(X, Q, rng=derive_rng(0)), Q)
    den = t.sd_slip_den.sum(axis=0)
    pooled = t.sd_slip_num.sum(axis=0) / np.maximum(den, 1)
    rates = pooled[den >= 500]
    assert len(rates) >= 3 and (np.diff(rates) > 0).all()


def test_denominator_pools():
    profiles = np.array([[1, 0], [0, 0], [1, 1]], dtype=np.int8)
    Q = np.array([[1, 0]], dtype=np.int8)
    seen = np.ones((3, 1), bool)
    slipped = np.array([[True], [True], [False]])
    guessed = np.zeros_like(slipped)
    ideal = estimate_table(profiles, Q, seen, slipped, guessed, "SI")
    # the level-0 student is predicted wrong, so the slip flag is dropped
    assert ideal.slip_den.tolist() == [2] and ideal.slip_num.tolist() == [1]
    assert ideal.guess_den.tolist() == [1]
    every = estimate_table(profiles, Q, seen, slipped, guessed, "SI", denominator="examinees")
    assert every.slip_den.tolist() == [3] and every.slip_num.tolist() == [2]
    with pytest.raises(ConfigError):
        estimate_table(profiles, Q, seen, slipped, guessed, "SI", denominator="all")


def test_count_conservation_and_rate_range():
    X, Q, _ = random_instance(np.random.default_rng(13), max_s=100, max_m=15, max_k=5, s=0.2, g=0.2)
    t = estimate_sd(esve_batch(X, Q, rng=derive_rng(0)), Q)
    np.testing.assert_array_equal(t.sd_slip_den.sum(axis=1), t.slip_den)
    np.testing.assert_array_equal(t.sd_guess_den.sum(axis=1), t.guess_den)
    np.testing.assert_array_equal(t.sd_slip_num.sum(axis=1), t.slip_num)
    np.testing.assert_array_equal(t.sd_guess_num.sum(axis=1), t.guess_num)
    probs = predict_matrix(esve_batch(X, Q, rng=derive_rng(0)).profiles, Q, t)
    assert ((probs >= 0) & (probs <= 1)).all()


def test_si_sd_agree_when_buckets_collapse():
    # one student level and one deficiency per question: SD cannot differ from SI
    profiles = np.array([[1, 1, 0]] * 6, dtype=np.int8)
    Q = np.array([[1, 0, 0], [0, 0, 1], [1, 1, 0]], dtype=np.int8)
    rng = np.random.default_rng(0)
    seen = np.ones((6, 3), bool)
    slipped = rng.random((6, 3)) < 0.3
    guessed = rng.random((6, 3)) < 0.3
    sd = estimate_table(profiles, Q, seen, slipped, guessed, "SD")
    np.testing.assert_allclose(predict_matrix(profiles, Q, sd), predict_matrix(profiles, Q, sd.with_mode("SI")))


@given(st.lists(st.integers(0, 1), min_size=4, max_size=4), st.lists(st.integers(0, 1), min_size=4, max_size=4), st.integers(0, 3))
def test_monotone_in_profile(profile, qvec, k):
    raised = list(profile)
    raised[k] = 1
    assert ideal_response(raised, qvec) >= ideal_response(profile, qvec)


def test_ideal_matrix_vectorized_matches_scalar():
    rng = np.random.default_rng(1)
    A = rng.integers(0, 2, (10, 4))
    Q = rng.integers(0, 2, (6, 4))
    expect = np.array([[ideal_response(a, q) for q in Q] for a in A], dtype=bool)
    np.testing.assert_array_equal(ideal_matrix(A, Q), expect)
