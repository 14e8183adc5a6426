import numpy as np
import pytest

from cogdiag import ConfigError
from cogdiag.esve import LabeledQuestionSets
from cogdiag.synth import GenerativeSpec, brute_force_feasible_profiles, generate, rate_curve


def test_noise_free_equals_ideal():
    d = generate(GenerativeSpec(200, 15, 4, slip=0.0, guess=0.0, seed=1))
    np.testing.assert_array_equal(d.responses.values, d.ideal.astype(float))


def test_all_slip_no_guess_is_all_wrong():
    d = generate(GenerativeSpec(100, 10, 3, slip=1.0, guess=0.0, seed=2))
    assert (d.responses.values == 0).all()


def test_q_rows_nonzero_and_densities():
    d = generate(GenerativeSpec(50, 40, 5, q_density=0.1, seed=3))
    assert (d.q.entries.sum(axis=1) >= 1).all()


def test_empirical_slip_frequency_per_question():
    # dense profiles give every question several hundred ideal examinees,
    # so +-0.03 is about 2.5 standard errors per question
    d = generate(GenerativeSpec(1000, 10, 2, profile_density=0.8, slip=0.1, guess=0.1, seed=4))
    X, xi = d.responses.values, d.ideal
    for j in range(10):
        sel = xi[:, j]
        assert sel.sum() >= 600
        assert abs((X[sel, j] == 0).mean() - 0.1) <= 0.03


def test_generator_statistics_large_sample():
    d = generate(GenerativeSpec(5000, 12, 4, slip=0.15, guess=0.25, seed=5))
    X, xi = d.responses.values, d.ideal
    assert abs(X[xi].mean() - 0.85) <= 0.02
    assert abs(X[~xi].mean() - 0.25) <= 0.02


def test_level_dependent_slip_curve():
    np.testing.assert_allclose(rate_curve((0.05, 0.02), [0, 1, 4]), [0.05, 0.07, 0.13])
    assert rate_curve((0.5, 0.3), [3])[0] == 0.95
    assert rate_curve((0.1, -0.2), [2])[0] == 0.0


def test_mask_rate_keeps_coverage():
    d = generate(GenerativeSpec(30, 8, 3, mask_rate=0.9, seed=6))
    obs = d.responses.observed
    assert obs.any(axis=1).all() and obs.any(axis=0).all()
    assert obs.mean() < 0.3


def test_same_seed_same_data():
    a = generate(GenerativeSpec(20, 6, 3, seed=9))
    b = generate(GenerativeSpec(20, 6, 3, seed=9))
    np.testing.assert_array_equal(a.responses.values, b.responses.values)
    assert a.truth_dict() == b.truth_dict()


@pytest.mark.parametrize("kw", [{"q_density": 0.0}, {"profile_density": 1.0}, {"slip": 1.2}, {"n_skills": 0}])
def test_invalid_specs(kw):
    args = dict(n_students=5, n_questions=3, n_skills=2)
    args.update(kw)
    with pytest.raises(ConfigError):
        GenerativeSpec(**args)


def test_oracle_hand_example():
    sets = LabeledQuestionSets.from_vectors([[0, 0, 1]], [[1, 1, 1]])
    assert brute_force_feasible_profiles(sets, 3) == {(0, 0, 1), (0, 1, 1), (1, 0, 1)}


def test_oracle_no_questions():
    sets = LabeledQuestionSets.from_vectors([], [], n_skills=3)
    assert len(brute_force_feasible_profiles(sets, 3)) == 8


def test_oracle_contradiction():
    sets = LabeledQuestionSets.from_vectors([[1, 0]], [[1, 0]])
    assert brute_force_feasible_profiles(sets, 2) == set()


def test_oracle_size_limit():
    with pytest.raises(ConfigError):
        brute_force_feasible_profiles(LabeledQuestionSets.from_vectors([], [], n_skills=21), 21)
