"""Explicit student-vector estimation.

Each student is solved on their own. Training questions are split into the
ones answered right and the ones answered wrong, right/wrong pairs that no
binary profile could explain are detected, the most conflicted questions are
peeled off until none remain, and the surviving questions bound every skill
bit from below (skills some right question needs) and above (skills that must
be missing to explain a wrong answer). Bits left free by both bounds are coin
flips.

Two entry points share the same rules: :func:`esve_solve` works on one student
with plain vectors; :func:`esve_batch` vectorizes over all students.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._validation import DataValidationError, check_mask, check_q_matrix, check_responses
from .core.rng import as_generator
from .core.types import SkillProfile

__all__ = [
    "LabeledQuestionSets",
    "ConflictReport",
    "ComponentBounds",
    "EsveResult",
    "EsveBatch",
    "partition_questions",
    "conflict_condition",
    "detect_conflicts",
    "peel_conflicts",
    "filter_unreliable",
    "estimate_bounds",
    "assign_profile",
    "esve_solve",
    "esve_batch",
    "dominance_matrix",
]


@dataclass(frozen=True)
class LabeledQuestionSets:
    """Question indices and vectors answered right and wrong by one student."""

    right_idx: np.ndarray
    right: np.ndarray
    wrong_idx: np.ndarray
    wrong: np.ndarray

    @classmethod
    def from_vectors(cls, right, wrong, n_skills=None):
        """Build sets from bare vectors, numbering right ``0..r-1`` then wrong ``r..``."""
        right, wrong = list(right), list(wrong)
        if n_skills is None:
            if not right and not wrong:
                raise ValueError("n_skills is required when both sets are empty")
            n_skills = len((right or wrong)[0])
        right = np.array(right, dtype=np.int8).reshape(-1, n_skills)
        wrong = np.array(wrong, dtype=np.int8).reshape(-1, n_skills)
        r = len(right)
        return cls(np.arange(r), right, np.arange(r, r + len(wrong)), wrong)

    @property
    def n_skills(self) -> int:
        return self.right.shape[1]

    def subset(self, keep_right, keep_wrong) -> "LabeledQuestionSets":
        return LabeledQuestionSets(
            self.right_idx[keep_right], self.right[keep_right], self.wrong_idx[keep_wrong], self.wrong[keep_wrong]
        )


@dataclass(frozen=True)
class ConflictReport:
    """Conflict degree per question index, and the conflicting (right, wrong) pairs."""

    degree: dict
    conflicting_pairs: list


@dataclass(frozen=True)
class ComponentBounds:
    """``lower[k]=1`` forces skill ``k`` on; ``upper_indicator[k]=1`` forces it off."""

    lower: np.ndarray
    upper_indicator: np.ndarray


@dataclass(frozen=True)
class EsveResult:
    profile: SkillProfile
    bounds: ComponentBounds
    filtered_from_right: frozenset
    filtered_from_wrong: frozenset
    residual_inconsistent_wrong: frozenset


def partition_questions(student: int, X, Q, cells=None) -> LabeledQuestionSets:
    """Split a student's observed training questions by answer."""
    X = check_responses(X)
    Q = check_q_matrix(Q, X.shape[1], allow_zero_rows=True)
    cells = check_mask(cells, X.shape)
    row = X[student]
    seen = cells[student] & ~np.isnan(row)
    if not seen.any():
        raise DataValidationError(f"student {student} has no observed training cell")
    right_idx = np.flatnonzero(seen & (row == 1))
    wrong_idx = np.flatnonzero(seen & (row == 0))
    return LabeledQuestionSets(right_idx, Q[right_idx], wrong_idx, Q[wrong_idx])


def conflict_condition(right_vec, wrong_vec) -> bool:
    """True when the right question needs every skill the wrong one needs.

    No binary profile can then pass the right question and fail the wrong one.
    """
    right_vec = np.asarray(right_vec)
    wrong_vec = np.asarray(wrong_vec)
    if right_vec.shape != wrong_vec.shape:
        raise ValueError(f"length mismatch: {right_vec.shape} vs {wrong_vec.shape}")
    return bool(np.all(right_vec >= wrong_vec))


def _conflict_matrix(sets: LabeledQuestionSets) -> np.ndarray:
    if len(sets.right) == 0 or len(sets.wrong) == 0:
        return np.zeros((len(sets.right), len(sets.wrong)), dtype=bool)
    return (sets.right[:, None, :] >= sets.wrong[None, :, :]).all(axis=2)


def detect_conflicts(sets: LabeledQuestionSets) -> ConflictReport:
    conflict = _conflict_matrix(sets)
    degree = {int(j): 0 for j in np.concatenate([sets.right_idx, sets.wrong_idx])}
    pairs = []
    for a, b in np.argwhere(conflict):
        p, q = int(sets.right_idx[a]), int(sets.wrong_idx[b])
        pairs.append((p, q))
        degree[p] += 1
        degree[q] += 1
    return ConflictReport(degree, pairs)


def peel_conflicts(conflict: np.ndarray):
    """Iteratively drop every row/column at the current maximum conflict degree.

    ``conflict`` is a boolean ``(n_rows, n_cols)`` matrix of conflicting pairs.
    Degrees are recounted only between rounds. Returns the boolean keep masks
    for rows and columns.
    """
    conflict = np.asarray(conflict, dtype=bool)
    keep_r = np.ones(conflict.shape[0], dtype=bool)
    keep_c = np.ones(conflict.shape[1], dtype=bool)
    while True:
        live = conflict & keep_r[:, None] & keep_c[None, :]
        deg_r = live.sum(axis=1)
        deg_c = live.sum(axis=0)
        top = max(deg_r.max(initial=0), deg_c.max(initial=0))
        if top == 0:
            return keep_r, keep_c
        keep_r &= deg_r != top
        keep_c &= deg_c != top


def filter_unreliable(sets: LabeledQuestionSets):
    """Remove conflicting questions until the sets are pairwise consistent.

    Returns ``(reliable, removed_right, removed_wrong)`` with the removed
    question indices as frozensets.
    """
    keep_r, keep_w = peel_conflicts(_conflict_matrix(sets))
    reliable = sets.subset(keep_r, keep_w)
    removed_right = frozenset(int(j) for j in sets.right_idx[~keep_r])
    removed_wrong = frozenset(int(j) for j in sets.wrong_idx[~keep_w])
    return reliable, removed_right, removed_wrong


def estimate_bounds(reliable: LabeledQuestionSets, n_skills: int | None = None) -> ComponentBounds:
    k = reliable.n_skills if n_skills is None else n_skills
    lower = reliable.right.reshape(-1, k).any(axis=0)
    wrong_skills = reliable.wrong.reshape(-1, k).any(axis=0)
    # every skill a wrong question tests beyond the lower bound is taken as missing
    upper = wrong_skills & ~lower
    return ComponentBounds(lower.astype(np.int8), upper.astype(np.int8))


def assign_profile(bounds: ComponentBounds, rng=None, coins=None) -> SkillProfile:
    lower = np.asarray(bounds.lower, dtype=bool)
    upper = np.asarray(bounds.upper_indicator, dtype=bool)
    assert not (lower & upper).any(), "a skill cannot be both forced on and forced off"
    if coins is None:
        coins = as_generator(rng).integers(0, 2, size=lower.shape[0])
    bits = np.where(upper, 0, np.where(lower, 1, coins))
    return SkillProfile(bits.astype(np.int8), (lower | upper).astype(np.int8))


def esve_solve(student: int, X, Q, cells=None, rng=None, coins=None) -> EsveResult:
    """Estimate one student's profile from their training answers."""
    Q = check_q_matrix(Q, allow_zero_rows=True)
    sets = partition_questions(student, X, Q, cells)
    reliable, removed_right, removed_wrong = filter_unreliable(sets)
    bounds = estimate_bounds(reliable, Q.shape[1])
    profile = assign_profile(bounds, rng, coins)
    covered = (profile.bits[None, :] >= reliable.wrong).all(axis=1) if len(reliable.wrong) else np.zeros(0, bool)
    residual = frozenset(int(j) for j in reliable.wrong_idx[covered])
    return EsveResult(profile, bounds, removed_right, removed_wrong, residual)


def dominance_matrix(vectors: np.ndarray) -> np.ndarray:
    """``D[a, b]`` is True when ``vectors[a] >= vectors[b]`` componentwise."""
    v = np.asarray(vectors, dtype=np.int8)
    return (v[:, None, :] >= v[None, :, :]).all(axis=2)


@dataclass(frozen=True)
class EsveBatch:
    """ESVE outputs for every student, as aligned arrays.

    Question-indexed masks have shape ``(n_students, n_questions)``; skill-indexed
    arrays have shape ``(n_students, n_skills)``.
    """

    profiles: np.ndarray
    determined: np.ndarray
    lower: np.ndarray
    upper_indicator: np.ndarray
    right: np.ndarray
    wrong: np.ndarray
    filtered_right: np.ndarray
    filtered_wrong: np.ndarray
    residual_wrong: np.ndarray
    has_data: np.ndarray

    @property
    def slipped(self) -> np.ndarray:
        return self.filtered_wrong | self.residual_wrong

    @property
    def guessed(self) -> np.ndarray:
        return self.filtered_right

    @property
    def reliable_right(self) -> np.ndarray:
        return self.right & ~self.filtered_right

    @property
    def reliable_wrong(self) -> np.ndarray:
        return self.wrong & ~self.filtered_wrong

    def result(self, i: int) -> EsveResult:
        def idx(mask):
            return frozenset(int(j) for j in np.flatnonzero(mask[i]))

        return EsveResult(
            SkillProfile(self.profiles[i], self.determined[i]),
            ComponentBounds(self.lower[i], self.upper_indicator[i]),
            idx(self.filtered_right),
            idx(self.filtered_wrong),
            idx(self.residual_wrong),
        )


def esve_batch(X, Q, cells=None, rng=None, coins=None) -> EsveBatch:
    """Run ESVE for all students at once.

    ``coins`` optionally supplies the ``(n_students, n_skills)`` fair bits used
    for unconstrained skills; otherwise they are drawn from ``rng`` in one call.
    """
    X = check_responses(X)
    Q = check_q_matrix(Q, X.shape[1], allow_zero_rows=True)
    cells = check_mask(cells, X.shape)
    s, k = X.shape[0], Q.shape[1]
    seen = cells & ~np.isnan(X)
    right = seen & (X == 1)
    wrong = seen & (X == 0)

    dom = dominance_matrix(Q)
    R, W = right.copy(), wrong.copy()
    while True:
        live = R[:, :, None] & W[:, None, :] & dom[None, :, :]
        degree = live.sum(axis=2) + live.sum(axis=1)
        top = degree.max(axis=1)
        if not top.any():
            break
        R &= ~((degree == top[:, None]) & (top > 0)[:, None])
        W &= ~((degree == top[:, None]) & (top > 0)[:, None])

    Qi = Q.astype(np.int32)
    lower = (R.astype(np.int32) @ Qi) > 0
    upper = ((W.astype(np.int32) @ Qi) > 0) & ~lower
    if coins is None:
        coins = as_generator(rng).integers(0, 2, size=(s, k))
    coins = np.asarray(coins).reshape(s, k)
    profiles = np.where(upper, 0, np.where(lower, 1, coins)).astype(np.int8)
    covered = (profiles.astype(np.int32) @ Qi.T) == Qi.sum(axis=1)[None, :]

    return EsveBatch(
        profiles=profiles,
        determined=(lower | upper).astype(np.int8),
        lower=lower.astype(np.int8),
        upper_indicator=upper.astype(np.int8),
        right=right,
        wrong=wrong,
        filtered_right=right & ~R,
        filtered_wrong=wrong & ~W,
        residual_wrong=W & covered,
        has_data=seen.any(axis=1),
    )
