"""Prediction metrics for binary outcomes."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata

__all__ = ["mae", "rmse", "auc", "MetricReport", "score_predictions"]


def _pair(pred, truth):
    pred = np.asarray(pred, dtype=np.float64).ravel()
    truth = np.asarray(truth, dtype=np.float64).ravel()
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: {pred.shape[0]} predictions vs {truth.shape[0]} outcomes")
    if pred.size == 0:
        raise ValueError("metrics need at least one prediction")
    return pred, truth


def mae(pred, truth) -> float:
    pred, truth = _pair(pred, truth)
    return float(np.mean(np.abs(pred - truth)))


def rmse(pred, truth) -> float:
    pred, truth = _pair(pred, truth)
    return float(np.sqrt(np.mean((pred - truth) ** 2)))


def auc(pred, truth) -> float:
    """Mann-Whitney AUC with mid-ranks for ties; NaN when only one class is present."""
    pred, truth = _pair(pred, truth)
    pos = truth == 1
    n_pos = int(pos.sum())
    n_neg = pred.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return math.nan
    ranks = rankdata(pred)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


@dataclass
class MetricReport:
    mae: float
    rmse: float
    auc: float
    n_cells: int
    seed: int | None = None
    per_question: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["auc"] = None if math.isnan(self.auc) else self.auc
        return d


def score_predictions(pred, truth, seed=None, question_index=None, question_ids=None) -> MetricReport:
    """Compute MAE/RMSE/AUC, optionally with a per-question MAE breakdown."""
    report = MetricReport(mae(pred, truth), rmse(pred, truth), auc(pred, truth), int(np.size(pred)), seed)
    if question_index is not None:
        pred = np.asarray(pred, dtype=np.float64)
        truth = np.asarray(truth, dtype=np.float64)
        question_index = np.asarray(question_index)
        for j in np.unique(question_index):
            sel = question_index == j
            key = question_ids[j] if question_ids is not None else int(j)
            report.per_question[key] = mae(pred[sel], truth[sel])
    return report
