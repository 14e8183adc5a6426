"""Reference slip/guess rates on held-out cells and the distortion of fitted tables."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._validation import check_mask, check_q_matrix, check_responses
from .predict import SlipGuessTable, deficiency_matrix

__all__ = ["ConsistencyReport", "consistency_reference", "distortion", "table_grids"]


def _ratio(num, den):
    out = np.full(num.shape, np.nan)
    np.divide(num, den, out=out, where=den > 0)
    return out


@dataclass
class ConsistencyReport:
    """Reference rates per (question, level) for slips and (question, deficiency) for guesses.

    Undefined buckets (no qualifying test cell) are NaN in ``s_ref``/``g_ref``.
    ``s_delta``/``g_delta`` map a model name to its distortion over defined
    buckets; the ``*_full`` variants divide by the whole grid size instead.
    """

    s_ref_num: np.ndarray
    s_ref_den: np.ndarray
    g_ref_num: np.ndarray
    g_ref_den: np.ndarray
    s_delta: dict = field(default_factory=dict)
    g_delta: dict = field(default_factory=dict)
    s_delta_full: dict = field(default_factory=dict)
    g_delta_full: dict = field(default_factory=dict)

    @property
    def s_ref(self) -> np.ndarray:
        return _ratio(self.s_ref_num, self.s_ref_den)

    @property
    def g_ref(self) -> np.ndarray:
        return _ratio(self.g_ref_num, self.g_ref_den)

    @property
    def heatmap_matrix(self) -> np.ndarray:
        return self.s_ref

    def to_dict(self) -> dict:
        def grid(a):
            return [[None if np.isnan(v) else float(v) for v in row] for row in a]

        return {
            "s_ref": grid(self.s_ref),
            "g_ref": grid(self.g_ref),
            "s_ref_den": self.s_ref_den.tolist(),
            "g_ref_den": self.g_ref_den.tolist(),
            "s_delta": self.s_delta,
            "g_delta": self.g_delta,
            "s_delta_full": self.s_delta_full,
            "g_delta_full": self.g_delta_full,
        }


def consistency_reference(test_cells, X, profiles, Q) -> ConsistencyReport:
    """Tally held-out slips by student level and guesses by deficiency.

    ``profiles`` must come from training cells only; ``test_cells`` is a
    boolean mask or an ``(n, 2)`` index array of held-out cells.
    """
    X = check_responses(X)
    Q = check_q_matrix(Q, X.shape[1], allow_zero_rows=True)
    profiles = np.asarray(profiles, dtype=np.int8)
    test_cells = np.asarray(test_cells)
    if test_cells.dtype != bool:
        mask = np.zeros(X.shape, dtype=bool)
        idx = test_cells.reshape(-1, 2).astype(np.intp)
        mask[idx[:, 0], idx[:, 1]] = True
        test_cells = mask
    test = check_mask(test_cells, X.shape) & ~np.isnan(X)
    m, k = Q.shape
    defic = deficiency_matrix(profiles, Q)
    ideal = defic == 0
    level = profiles.sum(axis=1)

    s_num = np.zeros((m, k + 1))
    s_den = np.zeros((m, k + 1))
    g_num = np.zeros((m, k + 1))
    g_den = np.zeros((m, k + 1))
    for b in range(k + 1):
        at_level = test & ideal & (level[:, None] == b)
        s_den[:, b] = at_level.sum(axis=0)
        s_num[:, b] = (at_level & (X == 0)).sum(axis=0)
        at_def = test & ~ideal & (defic == b)
        g_den[:, b] = at_def.sum(axis=0)
        g_num[:, b] = (at_def & (X == 1)).sum(axis=0)
    return ConsistencyReport(s_num, s_den, g_num, g_den)


def table_grids(table: SlipGuessTable, n_skills: int):
    """Expand a table to ``(n_questions, n_skills + 1)`` slip and guess grids.

    SI tables repeat the per-question rate along the level/deficiency axis; SD
    tables fill empty buckets with the SI rate.
    """
    m = table.n_questions
    s = np.repeat(table.si_slip[:, None], n_skills + 1, axis=1)
    g = np.repeat(table.si_guess[:, None], n_skills + 1, axis=1)
    if table.mode == "SD":
        sd_s, sd_g = table.sd_slip, table.sd_guess
        s = np.where(np.isnan(sd_s), s, sd_s)
        g = np.where(np.isnan(sd_g), g, sd_g)
    assert s.shape == (m, n_skills + 1)
    return s, g


def distortion(table: SlipGuessTable, ref: ConsistencyReport, name: str | None = None):
    """Mean absolute gap between fitted and reference rates over defined buckets.

    Returns ``(s_delta, g_delta)``; either is NaN when no bucket is defined.
    If ``name`` is given, the values (and the full-grid variants) are stored on ``ref``.
    """
    k = ref.s_ref_num.shape[1] - 1
    s_fit, g_fit = table_grids(table, k)
    out = []
    for fit, reference in ((s_fit, ref.s_ref), (g_fit, ref.g_ref)):
        defined = ~np.isnan(reference)
        gaps = np.abs(fit - reference)[defined]
        out.append((float(gaps.mean()) if gaps.size else float("nan"), float(gaps.sum() / reference.size)))
    if name is not None:
        ref.s_delta[name], ref.s_delta_full[name] = out[0]
        ref.g_delta[name], ref.g_delta_full[name] = out[1]
    return out[0][0], out[1][0]
