"""Held-out response prediction experiments, test-ratio tables and dimension sweeps."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from ._validation import ConfigError, check_fraction
from .consistency import ConsistencyReport, consistency_reference, distortion
from .core.rng import derive_rng, derive_seed
from .core.split import split_mask
from .core.types import QMatrix, ResponseMatrix
from .estimators import DinaEM, EsveDina, HbcaLabeler
from .hbca import HbcaConfig
from .metrics import MetricReport, score_predictions
from .predict import SlipGuessTable

__all__ = [
    "MODELS",
    "Q_SOURCES",
    "ExperimentConfig",
    "ExperimentReport",
    "TrialOutcome",
    "fit_model",
    "run_experiment",
    "run_ratio_table",
    "run_sweep",
    "format_table",
]

MODELS = ("dina-em", "esve-si", "esve-sd")
Q_SOURCES = ("file", "qst", "hbca")
_GOAL_FOR_MODEL = {"dina-em": "EM", "esve-si": "SI", "esve-sd": "SD"}


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment: a model, a Q source and ``repeat`` resampled splits.

    ``hbca_goal`` set to ``None`` selects candidates by the validation MAE of
    the evaluated model itself.
    """

    model: str = "esve-sd"
    q_source: str = "file"
    test_ratio: float = 0.2
    repeat: int = 5
    seed: int = 0
    smoothing: float = 0.0
    denominator: str = "ideal"
    em_max_iter: int = 500
    em_tol: float = 1e-6
    em_restarts: int = 1
    max_skills: int = 15
    hbca: HbcaConfig = field(default_factory=HbcaConfig)
    hbca_goal: str | None = None
    consistency: bool = False
    per_question: bool = False
    n_workers: int = 1

    def __post_init__(self):
        if self.model not in MODELS:
            raise ConfigError(f"model must be one of {MODELS}, got {self.model!r}")
        if self.q_source not in Q_SOURCES:
            raise ConfigError(f"q source must be one of {Q_SOURCES}, got {self.q_source!r}")
        check_fraction(self.test_ratio, "test_ratio", low_open=True, high_open=True)
        if self.repeat < 1:
            raise ConfigError("repeat must be >= 1")
        if self.n_workers < 1:
            raise ConfigError("workers must be >= 1")

    def hbca_config(self) -> HbcaConfig:
        goal = self.hbca_goal or _GOAL_FOR_MODEL[self.model]
        iterations = 0 if self.q_source == "qst" else self.hbca.iterations
        return replace(self.hbca, selecting_goal=goal, iterations=iterations)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hbca"] = self.hbca.to_dict()
        return d


@dataclass
class TrialOutcome:
    metrics: MetricReport
    q: np.ndarray
    consistency: ConsistencyReport | None = None
    hbca_report: list | None = None
    hbca_validation_mae: float | None = None


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    trials: list

    def _mean(self, name):
        vals = [getattr(t.metrics, name) for t in self.trials]
        vals = [v for v in vals if not math.isnan(v)]
        return float(np.mean(vals)) if vals else math.nan

    @property
    def mae(self) -> float:
        return self._mean("mae")

    @property
    def rmse(self) -> float:
        return self._mean("rmse")

    @property
    def auc(self) -> float:
        return self._mean("auc")

    def mean_delta(self):
        """Mean (s_delta, g_delta) over trials, or ``None`` without consistency data."""
        reps = [t.consistency for t in self.trials if t.consistency is not None]
        if not reps:
            return None
        name = self.config.model
        return tuple(float(np.nanmean([getattr(r, attr)[name] for r in reps])) for attr in ("s_delta", "g_delta"))

    def to_dict(self) -> dict:
        def clean(v):
            return None if isinstance(v, float) and math.isnan(v) else v

        out = {
            "config": self.config.to_dict(),
            "mean": {"mae": clean(self.mae), "rmse": clean(self.rmse), "auc": clean(self.auc)},
            "trials": [],
        }
        for t in self.trials:
            row = t.metrics.to_dict()
            row["n_skills"] = int(t.q.shape[1])
            if t.hbca_validation_mae is not None:
                row["hbca_validation_mae"] = t.hbca_validation_mae
            if t.consistency is not None:
                row["consistency"] = t.consistency.to_dict()
            out["trials"].append(row)
        delta = self.mean_delta()
        if delta is not None:
            out["mean"]["s_delta"], out["mean"]["g_delta"] = (clean(v) for v in delta)
        return out


def _sub_seed(seed, *keys) -> int:
    return int(derive_seed(seed, *keys).generate_state(1, dtype=np.uint32)[0])


def fit_model(model: str, X_train: np.ndarray, q: np.ndarray, seed: int, config: ExperimentConfig | None = None):
    """Fit ``model`` on the observed cells of ``X_train``.

    Returns ``(probabilities, profiles, table)``. For DINA-EM the profiles are
    MAP estimates and the table holds the per-question EM rates.
    """
    config = config or ExperimentConfig(model=model)
    if model == "dina-em":
        est = DinaEM(
            q,
            max_iter=config.em_max_iter,
            tol=config.em_tol,
            n_restarts=config.em_restarts,
            max_skills=config.max_skills,
            random_state=seed,
        ).fit(X_train)
        return est.predict_proba(), est.profiles_, SlipGuessTable.from_rates(est.slip_, est.guess_)
    if model in ("esve-si", "esve-sd"):
        est = EsveDina(
            q,
            slip_guess=model[-2:].upper(),
            smoothing=config.smoothing,
            denominator=config.denominator,
            random_state=seed,
        ).fit(X_train)
        return est.predict_proba(), est.profiles_, est.table_
    raise ConfigError(f"unknown model {model!r}")


def _run_trial(responses: ResponseMatrix, q_file, config: ExperimentConfig, t: int) -> TrialOutcome:
    X = responses.values
    parts = split_mask(~np.isnan(X), config.test_ratio, 0.0, derive_rng(config.seed, "trial", t, "split"))
    train, test = parts.train_mask, parts.test_mask
    X_train = np.where(train, X, np.nan)

    hbca_report = hbca_mae = None
    if config.q_source == "file":
        if q_file is None:
            raise ConfigError("q source 'file' needs a Q-matrix")
        q = q_file.aligned_to(responses.question_ids).entries if isinstance(q_file, QMatrix) else np.asarray(q_file)
    else:
        hc = config.hbca_config()
        labeler = HbcaLabeler(
            **hc.to_dict(),
            n_workers=1,
            random_state=_sub_seed(config.seed, "trial", t, "hbca"),
        ).fit(X_train)
        q = labeler.q_matrix_.entries
        hbca_report = labeler.report_
        hbca_mae = float(labeler.result_.best_validation_mae)

    probs, profiles, table = fit_model(config.model, X_train, q, _sub_seed(config.seed, "trial", t, "model"), config)
    cells = np.argwhere(test)
    pred = probs[cells[:, 0], cells[:, 1]]
    truth = X[cells[:, 0], cells[:, 1]]
    metrics = score_predictions(
        pred,
        truth,
        seed=t,
        question_index=cells[:, 1] if config.per_question else None,
        question_ids=responses.question_ids,
    )
    report = None
    if config.consistency:
        report = consistency_reference(test, X, profiles, q)
        distortion(table, report, name=config.model)
    return TrialOutcome(metrics, np.asarray(q), report, hbca_report, hbca_mae)


def run_experiment(responses: ResponseMatrix, q=None, config: ExperimentConfig | None = None) -> ExperimentReport:
    """Run ``config.repeat`` trials, each on a freshly drawn split.

    Trial ``t`` draws its split and model randomness from streams derived from
    ``(config.seed, t)``, so results do not depend on ``config.n_workers``.
    """
    config = config or ExperimentConfig()
    if not isinstance(responses, ResponseMatrix):
        values = np.asarray(responses, dtype=np.float64)
        responses = ResponseMatrix(
            values, tuple(f"s{i}" for i in range(values.shape[0])), tuple(f"q{j}" for j in range(values.shape[1]))
        )
    if config.n_workers > 1:
        with ThreadPoolExecutor(max_workers=config.n_workers) as pool:
            trials = list(pool.map(lambda t: _run_trial(responses, q, config, t), range(config.repeat)))
    else:
        trials = [_run_trial(responses, q, config, t) for t in range(config.repeat)]
    return ExperimentReport(config, trials)


def run_ratio_table(responses, q, models, ratios, base: ExperimentConfig) -> list:
    """Mean metrics per (model, test ratio), as rows for :func:`format_table`."""
    rows = []
    for model in models:
        for ratio in ratios:
            rep = run_experiment(responses, q, replace(base, model=model, test_ratio=float(ratio)))
            rows.append({"model": model, "test_ratio": float(ratio), "mae": rep.mae, "rmse": rep.rmse, "auc": rep.auc})
    return rows


def run_sweep(responses, dims, base: ExperimentConfig) -> list:
    """Validation and test MAE of HBCA-labeled Q-matrices at each fixed dimension."""
    rows = []
    for dim in dims:
        cfg = replace(base, q_source="hbca", hbca=replace(base.hbca, dim_qv_range=(int(dim), int(dim))))
        rep = run_experiment(responses, None, cfg)
        val = [t.hbca_validation_mae for t in rep.trials]
        rows.append(
            {
                "dim_qv": int(dim),
                "validation_mae": float(np.mean(val)),
                "test_mae": rep.mae,
                "test_rmse": rep.rmse,
                "test_auc": rep.auc,
            }
        )
    return rows


def format_table(rows, columns=None, digits: int = 4) -> str:
    """Render dict rows as an aligned plain-text table."""
    if not rows:
        return ""
    columns = list(columns or rows[0].keys())

    def cell(v):
        if isinstance(v, float):
            return "n/a" if math.isnan(v) else f"{v:.{digits}f}"
        return str(v)

    body = [[cell(r.get(c, "")) for c in columns] for r in rows]
    widths = [max(len(c), *(len(b[i]) for b in body)) for i, c in enumerate(columns)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(columns, widths)).rstrip()]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(v.rjust(w) for v, w in zip(b, widths)).rstrip() for b in body]
    return "\n".join(lines) + "\n"
