"""Per-cell train / validation / test splitting."""
from __future__ import annotations

import logging
import warnings

import numpy as np

from .._validation import check_fraction
from .rng import as_generator
from .types import DataSplit, ResponseMatrix

__all__ = ["split", "split_mask", "SplitWarning"]

log = logging.getLogger(__name__)

MAX_REDRAWS = 20


class SplitWarning(UserWarning):
    pass


def _draw(cells, n_test, n_val, rng):
    order = rng.permutation(len(cells))
    test = np.sort(order[:n_test])
    val = np.sort(order[n_test:n_test + n_val])
    train = np.sort(order[n_test + n_val:])
    return train, val, test


def _students_without_train(cells, train_idx, n_students):
    has = np.zeros(n_students, dtype=bool)
    has[cells[train_idx, 0]] = True
    present = np.zeros(n_students, dtype=bool)
    present[cells[:, 0]] = True
    return np.flatnonzero(present & ~has)


def split_mask(observed: np.ndarray, test_ratio: float, validation_ratio_of_train: float = 0.0, rng=None) -> DataSplit:
    """Split the ``True`` cells of ``observed`` globally at random.

    ``test_ratio`` of the cells go to test; ``validation_ratio_of_train`` of the
    remainder go to validation. The draw is repeated (bounded) until every
    student keeps a training cell; students still lacking one after that get one
    of their held-out cells moved back into train, with a warning.
    """
    check_fraction(test_ratio, "test_ratio", high_open=True)
    check_fraction(validation_ratio_of_train, "validation_ratio_of_train", high_open=True)
    rng = as_generator(rng)
    observed = np.asarray(observed, dtype=bool)
    cells = np.argwhere(observed)
    n = len(cells)
    n_test = int(round(n * test_ratio))
    n_val = int(round((n - n_test) * validation_ratio_of_train))

    for _ in range(MAX_REDRAWS):
        train, val, test = _draw(cells, n_test, n_val, rng)
        lacking = _students_without_train(cells, train, observed.shape[0])
        if lacking.size == 0:
            break
    else:
        warnings.warn(
            f"{lacking.size} student(s) have no training cell after {MAX_REDRAWS} draws; "
            "moving one held-out cell per student into train",
            SplitWarning,
            stacklevel=2,
        )
        held_out = np.concatenate([test, val])
        moved = []
        for i in lacking:
            candidates = held_out[cells[held_out, 0] == i]
            moved.append(candidates[0])
        moved = np.array(moved)
        train = np.sort(np.concatenate([train, moved]))
        test = np.setdiff1d(test, moved)
        val = np.setdiff1d(val, moved)

    return DataSplit(cells[train], cells[val], cells[test], observed.shape)


def split(responses: ResponseMatrix, test_ratio: float, validation_ratio_of_train: float = 0.0, rng=None) -> DataSplit:
    return split_mask(responses.observed, test_ratio, validation_ratio_of_train, rng)
