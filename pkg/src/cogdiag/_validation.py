"""Input validation helpers used by the estimators and the domain types."""
from __future__ import annotations

import numbers

import numpy as np

__all__ = [
    "DataValidationError",
    "ConfigError",
    "check_responses",
    "check_q_matrix",
    "check_mask",
    "check_fraction",
    "check_binary_vector",
]


class DataValidationError(ValueError):
    """Input data violates a format or content rule."""


class ConfigError(ValueError):
    """A hyperparameter or configuration value is out of range."""


def check_responses(X, *, require_coverage: bool = False) -> np.ndarray:
    """Validate a response grid and return it as float64 with NaN for unobserved.

    Parameters
    ----------
    X : array-like of shape (n_students, n_questions)
        Cells must be 0, 1 or NaN.
    require_coverage : bool
        If True, every row and every column needs at least one observed cell.
    """
    try:
        X = np.array(X, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise DataValidationError(f"responses are not numeric: {exc}") from None
    if X.ndim != 2:
        raise DataValidationError(f"responses must be 2-D, got shape {X.shape}")
    if X.shape[0] == 0 or X.shape[1] == 0:
        raise DataValidationError("responses must have at least one student and one question")
    obs = ~np.isnan(X)
    bad = obs & (X != 0) & (X != 1)
    if bad.any():
        i, j = np.argwhere(bad)[0]
        raise DataValidationError(f"score {X[i, j]!r} at cell ({i}, {j}) is not 0 or 1")
    if require_coverage:
        empty_rows = np.flatnonzero(~obs.any(axis=1))
        if empty_rows.size:
            raise DataValidationError(f"student row {empty_rows[0]} has no observed cell")
        empty_cols = np.flatnonzero(~obs.any(axis=0))
        if empty_cols.size:
            raise DataValidationError(f"question column {empty_cols[0]} has no observed cell")
    return X


def check_q_matrix(Q, n_questions: int | None = None, *, allow_zero_rows: bool = False) -> np.ndarray:
    """Validate a Q-matrix and return it as an int8 array."""
    Q = np.asarray(Q)
    if Q.ndim != 2 or Q.shape[0] < 1 or Q.shape[1] < 1:
        raise DataValidationError(f"Q-matrix must be a non-empty 2-D array, got shape {Q.shape}")
    if not np.isin(Q, (0, 1)).all():
        raise DataValidationError("Q-matrix entries must be 0 or 1")
    Q = Q.astype(np.int8)
    if n_questions is not None and Q.shape[0] != n_questions:
        raise DataValidationError(f"Q-matrix has {Q.shape[0]} rows but responses have {n_questions} questions")
    if not allow_zero_rows:
        zero = np.flatnonzero(Q.sum(axis=1) == 0)
        if zero.size:
            raise DataValidationError(f"question row {zero[0]} tests no skill")
    return Q


def check_mask(mask, shape) -> np.ndarray:
    if mask is None:
        return np.ones(shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != tuple(shape):
        raise DataValidationError(f"cell mask has shape {mask.shape}, expected {tuple(shape)}")
    return mask


def check_fraction(value, name: str, *, low=0.0, high=1.0, low_open=False, high_open=False) -> float:
    if not isinstance(value, numbers.Real) or isinstance(value, bool):
        raise ConfigError(f"{name} must be a number, got {value!r}")
    v = float(value)
    too_low = v <= low if low_open else v < low
    too_high = v >= high if high_open else v > high
    if too_low or too_high or np.isnan(v):
        lb = "(" if low_open else "["
        rb = ")" if high_open else "]"
        raise ConfigError(f"{name}={value!r} outside {lb}{low}, {high}{rb}")
    return v


def check_binary_vector(v, length: int | None = None, name: str = "vector") -> np.ndarray:
    v = np.asarray(v)
    if v.ndim != 1 or not np.isin(v, (0, 1)).all():
        raise DataValidationError(f"{name} must be a binary 1-D vector")
    if length is not None and v.shape[0] != length:
        raise DataValidationError(f"{name} has length {v.shape[0]}, expected {length}")
    return v.astype(np.int8)
