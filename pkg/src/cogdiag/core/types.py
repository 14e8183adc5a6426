"""Domain types shared across the toolkit.

Arrays stored on these objects are made read-only at construction so they can
be shared between workers without copying.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .._validation import DataValidationError, check_q_matrix, check_responses

__all__ = [
    "QMatrix",
    "SkillProfile",
    "ResponseMatrix",
    "DataSplit",
    "cells_to_mask",
    "mask_to_cells",
]


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


def _check_ids(ids, n, what):
    ids = [str(i) for i in ids]
    if len(ids) != n:
        raise DataValidationError(f"expected {n} {what} ids, got {len(ids)}")
    if len(set(ids)) != n:
        seen = set()
        dup = next(i for i in ids if i in seen or seen.add(i))
        raise DataValidationError(f"duplicate {what} id {dup!r}")
    return tuple(ids)


@dataclass(frozen=True, eq=False)
class QMatrix:
    """Binary question x skill matrix.

    Row ``j`` is the skill vector of question ``j``; ``entries[j, k] == 1``
    means question ``j`` tests skill ``k``.
    """

    entries: np.ndarray
    question_ids: tuple = None
    skill_ids: tuple = None

    def __post_init__(self):
        entries = check_q_matrix(self.entries)
        m, k = entries.shape
        qids = self.question_ids if self.question_ids is not None else [f"q{j}" for j in range(m)]
        sids = self.skill_ids if self.skill_ids is not None else [f"skill-{i}" for i in range(k)]
        object.__setattr__(self, "entries", _frozen(entries))
        object.__setattr__(self, "question_ids", _check_ids(qids, m, "question"))
        object.__setattr__(self, "skill_ids", _check_ids(sids, k, "skill"))

    @property
    def n_questions(self) -> int:
        return self.entries.shape[0]

    @property
    def n_skills(self) -> int:
        return self.entries.shape[1]

    def __eq__(self, other):
        if not isinstance(other, QMatrix):
            return NotImplemented
        return (
            np.array_equal(self.entries, other.entries)
            and self.question_ids == other.question_ids
            and self.skill_ids == other.skill_ids
        )

    def aligned_to(self, question_ids) -> "QMatrix":
        """Reorder rows to match ``question_ids``."""
        index = {q: j for j, q in enumerate(self.question_ids)}
        missing = [q for q in question_ids if q not in index]
        if missing:
            raise DataValidationError(f"questions missing from Q-matrix: {missing[:5]}")
        rows = [index[q] for q in question_ids]
        return QMatrix(self.entries[rows], tuple(question_ids), self.skill_ids)


@dataclass(frozen=True, eq=False)
class SkillProfile:
    """A student's binary mastery vector.

    ``determined_mask[k]`` is 1 when bit ``k`` was forced by a bound and 0 when
    it was drawn at random.
    """

    bits: np.ndarray
    determined_mask: np.ndarray = None

    def __post_init__(self):
        bits = np.asarray(self.bits)
        if bits.ndim != 1 or not np.isin(bits, (0, 1)).all():
            raise DataValidationError("profile bits must be a binary vector")
        mask = np.ones_like(bits) if self.determined_mask is None else np.asarray(self.determined_mask)
        if mask.shape != bits.shape or not np.isin(mask, (0, 1)).all():
            raise DataValidationError("determined_mask must be a binary vector shaped like bits")
        object.__setattr__(self, "bits", _frozen(bits.astype(np.int8)))
        object.__setattr__(self, "determined_mask", _frozen(mask.astype(np.int8)))

    @property
    def level(self) -> int:
        return int(self.bits.sum())

    def __eq__(self, other):
        if not isinstance(other, SkillProfile):
            return NotImplemented
        return np.array_equal(self.bits, other.bits) and np.array_equal(
            self.determined_mask, other.determined_mask
        )


@dataclass(frozen=True, eq=False)
class ResponseMatrix:
    """Students x questions answer grid: 1.0 correct, 0.0 incorrect, NaN unobserved."""

    values: np.ndarray
    student_ids: tuple = None
    question_ids: tuple = None

    def __post_init__(self):
        values = check_responses(self.values, require_coverage=True)
        s, m = values.shape
        sids = self.student_ids if self.student_ids is not None else [f"s{i}" for i in range(s)]
        qids = self.question_ids if self.question_ids is not None else [f"q{j}" for j in range(m)]
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "student_ids", _check_ids(sids, s, "student"))
        object.__setattr__(self, "question_ids", _check_ids(qids, m, "question"))

    @property
    def shape(self):
        return self.values.shape

    @property
    def observed(self) -> np.ndarray:
        return ~np.isnan(self.values)

    @property
    def n_observed(self) -> int:
        return int(self.observed.sum())

    def masked(self, mask: np.ndarray) -> np.ndarray:
        """Copy of ``values`` with every cell outside ``mask`` set to NaN."""
        out = np.array(self.values, copy=True)
        out[~np.asarray(mask, dtype=bool)] = np.nan
        return out

    def __eq__(self, other):
        if not isinstance(other, ResponseMatrix):
            return NotImplemented
        return (
            np.array_equal(self.values, other.values, equal_nan=True)
            and self.student_ids == other.student_ids
            and self.question_ids == other.question_ids
        )


def cells_to_mask(cells, shape) -> np.ndarray:
    mask = np.zeros(shape, dtype=bool)
    cells = np.asarray(cells, dtype=np.intp).reshape(-1, 2)
    mask[cells[:, 0], cells[:, 1]] = True
    return mask


def mask_to_cells(mask) -> np.ndarray:
    """Row-major ``(student, question)`` index pairs of the set cells."""
    return np.argwhere(np.asarray(mask, dtype=bool)).astype(np.intp)


@dataclass(frozen=True)
class DataSplit:
    """Disjoint train / validation / test cell sets, each an ``(n, 2)`` index array."""

    train_cells: np.ndarray
    validation_cells: np.ndarray
    test_cells: np.ndarray
    shape: tuple = field(default=None)

    def mask(self, part: str) -> np.ndarray:
        cells = {"train": self.train_cells, "validation": self.validation_cells, "test": self.test_cells}[part]
        return cells_to_mask(cells, self.shape)

    @property
    def train_mask(self) -> np.ndarray:
        return self.mask("train")

    @property
    def validation_mask(self) -> np.ndarray:
        return self.mask("validation")

    @property
    def test_mask(self) -> np.ndarray:
        return self.mask("test")
