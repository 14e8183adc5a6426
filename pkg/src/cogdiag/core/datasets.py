"""Dataset utilities: subset filtering and loaders for the public benchmark files."""
from __future__ import annotations

import os

import numpy as np

from .._validation import DataValidationError, check_fraction
from .io import load_qmatrix, load_responses
from .types import QMatrix, ResponseMatrix

__all__ = ["filter_assist_subset", "load_fraction", "load_whitespace_matrix", "FRACTION_ENV"]

FRACTION_ENV = "COGDIAG_FRACTION_DIR"


def filter_assist_subset(
    raw: ResponseMatrix, min_question_freq: float = 0.2, min_student_freq: float = 0.5
) -> ResponseMatrix:
    """Keep frequently answered questions, then students who answered enough of them.

    Duplicates are already collapsed (first occurrence kept) when a log is loaded
    with ``strict=False``. The question pass uses the fraction of students who
    answered the question; the student pass uses the fraction of surviving
    questions the student answered. Rows or columns left empty are dropped.
    """
    check_fraction(min_question_freq, "min_question_freq")
    check_fraction(min_student_freq, "min_student_freq")
    obs = raw.observed
    q_keep = obs.mean(axis=0) >= min_question_freq
    if not q_keep.any():
        raise DataValidationError("no question passes the frequency filter")
    obs_q = obs[:, q_keep]
    s_keep = (obs_q.mean(axis=1) >= min_student_freq) & obs_q.any(axis=1)
    if not s_keep.any():
        raise DataValidationError("no student passes the frequency filter")
    values = raw.values[np.ix_(s_keep, q_keep)]
    col_keep = ~np.isnan(values).all(axis=0)
    values = values[:, col_keep]
    qids = [q for q, k in zip(raw.question_ids, q_keep) if k]
    qids = [q for q, k in zip(qids, col_keep) if k]
    sids = [s for s, k in zip(raw.student_ids, s_keep) if k]
    if values.size == 0:
        raise DataValidationError("filtered subset is empty")
    return ResponseMatrix(values, tuple(sids), tuple(qids))


def load_whitespace_matrix(path) -> np.ndarray:
    """Read a headerless whitespace-separated integer grid (FrcSub ``data.txt``/``q.txt``)."""
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rows.append([int(t) for t in line.split()])
    return np.array(rows)


def load_fraction(directory=None):
    """Load the Fraction (FrcSub) dataset.

    Looks in ``directory`` or ``$COGDIAG_FRACTION_DIR`` for either
    ``responses.csv`` (csv-wide) + ``q.csv`` or the raw ``data.txt`` + ``q.txt``.
    Returns ``(responses, q)`` or ``None`` if nothing is found.
    """
    directory = directory or os.environ.get(FRACTION_ENV)
    if not directory or not os.path.isdir(directory):
        return None
    wide = os.path.join(directory, "responses.csv")
    qcsv = os.path.join(directory, "q.csv")
    if os.path.exists(wide) and os.path.exists(qcsv):
        responses = load_responses(wide, "csv-wide")
        return responses, load_qmatrix(qcsv).aligned_to(responses.question_ids)
    data_txt = os.path.join(directory, "data.txt")
    q_txt = os.path.join(directory, "q.txt")
    if os.path.exists(data_txt) and os.path.exists(q_txt):
        data = load_whitespace_matrix(data_txt).astype(np.float64)
        q = load_whitespace_matrix(q_txt)
        qids = tuple(f"q{j + 1}" for j in range(data.shape[1]))
        return ResponseMatrix(data, None, qids), QMatrix(q, qids, tuple(f"skill-{k}" for k in range(q.shape[1])))
    return None
