import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cogdiag.core.rng import derive_rng
from cogdiag.esve import (
    ComponentBounds,
    LabeledQuestionSets,
    assign_profile,
    conflict_condition,
    detect_conflicts,
    esve_batch,
    esve_solve,
    estimate_bounds,
    filter_unreliable,
    partition_questions,
)
from cogdiag.predict import ideal_matrix
from cogdiag.synth import brute_force_feasible_profiles

from .conftest import random_instance

S = LabeledQuestionSets.from_vectors


# ---------------------------------------------------------------- partition


def test_partition_skips_unobserved():
    X = np.array([[1.0, 0.0, np.nan]])
    Q = np.eye(3, dtype=np.int8)
    sets = partition_questions(0, X, Q)
    assert sets.right_idx.tolist() == [0] and sets.wrong_idx.tolist() == [1]


def test_partition_all_correct():
    sets = partition_questions(0, np.ones((1, 3)), np.eye(3, dtype=np.int8))
    assert len(sets.wrong) == 0 and len(sets.right) == 3


def test_partition_respects_training_cells():
    X = np.array([[1.0, 0.0, 1.0]])
    cells = np.array([[True, False, True]])
    sets = partition_questions(0, X, np.eye(3, dtype=np.int8), cells)
    assert len(sets.right) + len(sets.wrong) == 2


# ---------------------------------------------------------------- conflicts


@pytest.mark.parametrize(
    "right,wrong,expected",
    [([0, 0, 1], [1, 1, 1], False), ([1, 1, 0], [1, 0, 0], True), ([1, 0, 1], [1, 0, 1], True)],
)
def test_conflict_condition(right, wrong, expected):
    assert conflict_condition(right, wrong) is expected


def test_conflict_condition_length_mismatch():
    with pytest.raises(ValueError):
        conflict_condition([1, 0], [1, 0, 0])


def test_degrees_two_pairs():
    rep = detect_conflicts(S([[1, 0]], [[1, 0], [0, 1]]))
    assert rep.degree == {0: 1, 1: 1, 2: 0}
    assert rep.conflicting_pairs == [(0, 1)]


def test_degrees_double_conflict():
    rep = detect_conflicts(S([[1, 1]], [[1, 0], [0, 1]]))
    assert rep.degree == {0: 2, 1: 1, 2: 1}


def test_degrees_empty_wrong():
    rep = detect_conflicts(S([[1, 1], [0, 1]], []))
    assert set(rep.degree.values()) == {0}


# ---------------------------------------------------------------- filtering


def test_filter_no_conflict_identity():
    sets = S([[0, 0, 1]], [[1, 1, 1]])
    reliable, rr, rw = filter_unreliable(sets)
    assert rr == frozenset() and rw == frozenset()
    np.testing.assert_array_equal(reliable.right, sets.right)


def test_filter_tied_pair_removes_both():
    reliable, rr, rw = filter_unreliable(S([[1, 0]], [[1, 0]]))
    assert len(reliable.right) == 0 and len(reliable.wrong) == 0
    assert rr == {0} and rw == {1}


def test_filter_exhaustive_trace():
    reliable, rr, rw = filter_unreliable(S([[1, 1], [0, 1]], [[1, 0]]))
    assert reliable.right.tolist() == [[0, 1]] and len(reliable.wrong) == 0
    assert rr == {0} and rw == {2}


# ---------------------------------------------------------------- bounds


def test_bounds_worked_example():
    b = estimate_bounds(S([[0, 0, 1]], [[1, 1, 1]]))
    assert b.lower.tolist() == [0, 0, 1]
    assert b.upper_indicator.tolist() == [1, 1, 0]


def test_bounds_no_wrong():
    b = estimate_bounds(S([[1, 0], [0, 1]], []))
    assert b.lower.tolist() == [1, 1] and b.upper_indicator.tolist() == [0, 0]


def test_assign_forced_bits():
    p = assign_profile(ComponentBounds(np.array([0, 0, 1]), np.array([1, 1, 0])), derive_rng(0))
    assert p.bits.tolist() == [0, 0, 1] and p.determined_mask.tolist() == [1, 1, 1]
    p = assign_profile(ComponentBounds(np.array([1, 0]), np.array([0, 1])), derive_rng(0))
    assert p.bits.tolist() == [1, 0]


def test_assign_free_bit_uses_coin():
    for coin in (0, 1):
        p = assign_profile(ComponentBounds(np.array([0]), np.array([0])), coins=np.array([coin]))
        assert p.bits.tolist() == [coin] and p.determined_mask.tolist() == [0]


def test_assign_rejects_overlap():
    with pytest.raises(AssertionError):
        assign_profile(ComponentBounds(np.array([1]), np.array([1])), derive_rng(0))


def test_solve_worked_example():
    X = np.array([[1.0, 0.0]])
    Q = np.array([[0, 0, 1], [1, 1, 1]], dtype=np.int8)
    res = esve_solve(0, X, Q, rng=derive_rng(0))
    assert res.profile.bits.tolist() == [0, 0, 1]


def test_solve_all_correct_covers_attempted():
    rng = np.random.default_rng(1)
    Q = (rng.random((6, 4)) < 0.4).astype(np.int8)
    Q[Q.sum(axis=1) == 0, 0] = 1
    res = esve_solve(0, np.ones((1, 6)), Q, rng=derive_rng(0))
    assert (res.profile.bits >= Q.max(axis=0)).all()


def test_residual_wrong_is_covered_by_profile():
    # the wrong question [1,1] survives filtering but is covered by the union of right ones
    X = np.array([[1.0, 1.0, 0.0]])
    Q = np.array([[1, 0], [0, 1], [1, 1]], dtype=np.int8)
    res = esve_solve(0, X, Q, rng=derive_rng(0))
    assert res.residual_inconsistent_wrong == {2}
    assert res.filtered_from_wrong == frozenset()


# ---------------------------------------------------------------- properties


@st.composite
def labeled_sets(draw):
    k = draw(st.integers(1, 5))
    vec = st.lists(st.integers(0, 1), min_size=k, max_size=k)
    right = draw(st.lists(vec, max_size=8))
    wrong = draw(st.lists(vec, max_size=8))
    return S(right, wrong, n_skills=k)


@given(labeled_sets())
def test_filtered_sets_are_pairwise_consistent(sets):
    reliable, rr, rw = filter_unreliable(sets)
    for p in reliable.right:
        for q in reliable.wrong:
            assert not conflict_condition(p, q)
    assert not (rr & set(reliable.right_idx.tolist()))
    assert not (rw & set(reliable.wrong_idx.tolist()))


@given(labeled_sets())
def test_filtering_conflicts_strictly_decrease(sets):
    # replay the peeling loop and watch the total conflict count
    keep_r = np.ones(len(sets.right), bool)
    keep_w = np.ones(len(sets.wrong), bool)
    rounds = 0
    prev = None
    while True:
        cur = sets.subset(keep_r, keep_w)
        rep = detect_conflicts(cur)
        total = len(rep.conflicting_pairs)
        assert sum(rep.degree.values()) == 2 * total
        if prev is not None:
            assert total < prev
        if total == 0:
            break
        top = max(rep.degree.values())
        keep_r &= ~np.isin(sets.right_idx, [j for j, d in rep.degree.items() if d == top])
        keep_w &= ~np.isin(sets.wrong_idx, [j for j, d in rep.degree.items() if d == top])
        prev = total
        rounds += 1
    assert rounds <= len(sets.right) + len(sets.wrong)
    reliable, _, _ = filter_unreliable(sets)
    np.testing.assert_array_equal(reliable.right_idx, sets.right_idx[keep_r])
    np.testing.assert_array_equal(reliable.wrong_idx, sets.wrong_idx[keep_w])


@given(labeled_sets())
def test_profile_explains_reliable_sets_on_determined_bits(sets):
    reliable, _, _ = filter_unreliable(sets)
    b = estimate_bounds(reliable, sets.n_skills)
    assert not (b.lower.astype(bool) & b.upper_indicator.astype(bool)).any()
    for coins in (np.zeros(sets.n_skills, int), np.ones(sets.n_skills, int)):
        p = assign_profile(b, coins=coins)
        for v in reliable.right:
            assert (p.bits >= v).all()


def test_noise_free_oracle_and_bound_soundness():
    rng = np.random.default_rng(2024)
    for _ in range(150):
        X, Q, A = random_instance(rng, max_s=30, max_m=12, max_k=5)
        for i in range(X.shape[0]):
            res = esve_solve(i, X, Q, rng=derive_rng(i))
            sets = partition_questions(i, X, Q)
            feasible = brute_force_feasible_profiles(sets, Q.shape[1])
            assert tuple(int(b) for b in res.profile.bits) in feasible
            assert (res.bounds.lower <= A[i]).all()
            # every wrong question has a forced-off skill the true profile lacks
            off = res.bounds.upper_indicator.astype(bool)
            for j in np.flatnonzero(X[i] == 0):
                assert ((Q[j] == 1) & off & (A[i] == 0)).any()
            assert not res.filtered_from_right and not res.filtered_from_wrong


def test_forced_off_skills_can_include_mastered_ones():
    # worst-combination reading: both skills of the failed question are forced off,
    # although a true profile [1, 0] explains the failure just as well
    sets = S([], [[1, 1]])
    b = estimate_bounds(sets)
    assert b.upper_indicator.tolist() == [1, 1]
    assert (1, 0) in brute_force_feasible_profiles(sets, 2)


def test_batch_matches_single_student():
    rng = np.random.default_rng(7)
    X, Q, _ = random_instance(rng, max_s=40, max_m=15, max_k=5, s=0.15, g=0.15)
    X[rng.random(X.shape) < 0.2] = np.nan
    coins = rng.integers(0, 2, size=(X.shape[0], Q.shape[1]))
    batch = esve_batch(X, Q, coins=coins)
    for i in range(X.shape[0]):
        if not batch.has_data[i]:
            continue
        single = esve_solve(i, X, Q, coins=coins[i])
        r = batch.result(i)
        np.testing.assert_array_equal(single.profile.bits, r.profile.bits)
        np.testing.assert_array_equal(single.profile.determined_mask, r.profile.determined_mask)
        assert single.filtered_from_right == r.filtered_from_right
        assert single.filtered_from_wrong == r.filtered_from_wrong
        assert single.residual_inconsistent_wrong == r.residual_inconsistent_wrong


def test_reconstruction_noise_free():
    rng = np.random.default_rng(11)
    X, Q, _ = random_instance(rng, max_s=80, max_m=20, max_k=6)
    batch = esve_batch(X, Q, rng=derive_rng(0))
    np.testing.assert_array_equal(ideal_matrix(batch.profiles, Q), X.astype(bool))


def test_determinism():
    rng = np.random.default_rng(3)
    X, Q, _ = random_instance(rng, max_s=50, max_m=10, max_k=4, s=0.2, g=0.2)
    a = esve_batch(X, Q, rng=derive_rng(9))
    b = esve_batch(X, Q, rng=derive_rng(9))
    np.testing.assert_array_equal(a.profiles, b.profiles)
    np.testing.assert_array_equal(a.filtered_wrong, b.filtered_wrong)
