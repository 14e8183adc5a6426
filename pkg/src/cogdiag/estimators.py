"""Scikit-learn style estimators.

``X`` is a students x questions array with ``NaN`` for unobserved cells (or a
:class:`~cogdiag.core.types.ResponseMatrix`). ``fit`` uses every observed cell,
so mask held-out cells to ``NaN`` before fitting.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import ConfigError, check_q_matrix, check_responses
from .core.rng import as_generator, derive_rng
from .core.types import QMatrix, ResponseMatrix
from .dina_em import DEFAULT_MAX_SKILLS, em_fit, em_predict_matrix, map_profiles
from .esve import esve_batch
from .hbca import HbcaConfig, hbca_run
from .predict import estimate_table, predict_matrix

__all__ = ["EsveDina", "DinaEM", "HbcaLabeler", "question_accuracy"]


def _values(X) -> np.ndarray:
    if isinstance(X, ResponseMatrix):
        return X.values
    return check_responses(X)


def _q_entries(q_matrix, n_questions) -> np.ndarray:
    if q_matrix is None:
        raise ConfigError("a Q-matrix is required")
    if isinstance(q_matrix, QMatrix):
        q_matrix = q_matrix.entries
    return check_q_matrix(q_matrix, n_questions)


def _stream(random_state, *keys):
    """Fresh generator per call so repeated calls with an int seed agree."""
    if random_state is None or isinstance(random_state, np.random.Generator):
        return as_generator(random_state)
    return derive_rng(int(random_state), *keys)


def question_accuracy(X) -> np.ndarray:
    """Per-question share of correct answers; the global share for unanswered questions."""
    X = _values(X)
    seen = ~np.isnan(X)
    n = seen.sum(axis=0)
    right = np.nansum(X, axis=0)
    overall = right.sum() / max(n.sum(), 1)
    return np.where(n > 0, right / np.maximum(n, 1), overall)


class EsveDina(BaseEstimator):
    """DINA with explicitly estimated skill profiles.

    Parameters
    ----------
    q_matrix : QMatrix or array of shape (n_questions, n_skills)
    slip_guess : {"SD", "SI"}
        Student-dependent (level/deficiency indexed) or per-question rates.
    smoothing : float
        Additive pseudo-count for the rate tables.
    denominator : {"ideal", "examinees"}
        Pool that slip and guess counts are divided by; see ``estimate_table``.
    random_state : int, Generator or None
        Seeds the coin flips for undetermined profile bits.

    Attributes
    ----------
    profiles_ : ndarray (n_students, n_skills)
    batch_ : EsveBatch
    table_ : SlipGuessTable
    fallback_ : per-question accuracy used for students with no observed cell
    """

    def __init__(self, q_matrix=None, slip_guess="SD", smoothing=0.0, denominator="ideal", random_state=None):
        self.q_matrix = q_matrix
        self.slip_guess = slip_guess
        self.smoothing = smoothing
        self.denominator = denominator
        self.random_state = random_state

    def _mode(self):
        mode = str(self.slip_guess).upper()
        if mode not in ("SD", "SI"):
            raise ConfigError(f"slip_guess must be 'SD' or 'SI', got {self.slip_guess!r}")
        return mode

    def fit(self, X, y=None):
        X = _values(X)
        mode = self._mode()
        if self.smoothing < 0:
            raise ConfigError("smoothing must be >= 0")
        self.q_ = _q_entries(self.q_matrix, X.shape[1])
        self.batch_ = esve_batch(X, self.q_, rng=_stream(self.random_state, "esve", "fit"))
        b = self.batch_
        self.table_ = estimate_table(
            b.profiles, self.q_, b.right | b.wrong, b.slipped, b.guessed, mode, self.smoothing, self.denominator
        )
        self.profiles_ = b.profiles
        self.fallback_ = question_accuracy(X)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        """Skill profiles of the students in ``X`` under the fitted Q-matrix."""
        check_is_fitted(self, "table_")
        X = _values(X)
        return esve_batch(X, self.q_, rng=_stream(self.random_state, "esve", "transform")).profiles

    def fit_transform(self, X, y=None):
        return self.fit(X).profiles_

    def predict_proba(self, X=None):
        """Probability of a correct answer for every (student, question) cell.

        With ``X=None`` the students seen in ``fit`` are scored.
        """
        check_is_fitted(self, "table_")
        if X is None:
            profiles, has_data = self.profiles_, self.batch_.has_data
        else:
            X = _values(X)
            batch = esve_batch(X, self.q_, rng=_stream(self.random_state, "esve", "transform"))
            profiles, has_data = batch.profiles, batch.has_data
        probs = predict_matrix(profiles, self.q_, self.table_)
        probs[~has_data] = self.fallback_[None, :]
        return probs

    def predict(self, X=None):
        return (self.predict_proba(X) >= 0.5).astype(np.int8)


class DinaEM(BaseEstimator):
    """DINA fitted by marginal maximum likelihood (EM over latent classes).

    Attributes
    ----------
    state_ : EmState
    slip_, guess_ : per-question rates
    profiles_ : MAP profiles of the fitted students
    """

    def __init__(
        self,
        q_matrix=None,
        max_iter=500,
        tol=1e-6,
        n_restarts=1,
        max_skills=DEFAULT_MAX_SKILLS,
        factorize="auto",
        random_state=None,
    ):
        self.q_matrix = q_matrix
        self.max_iter = max_iter
        self.tol = tol
        self.n_restarts = n_restarts
        self.max_skills = max_skills
        self.factorize = factorize
        self.random_state = random_state

    def fit(self, X, y=None):
        X = _values(X)
        self.q_ = _q_entries(self.q_matrix, X.shape[1])
        self.state_ = em_fit(
            X,
            self.q_,
            max_iter=self.max_iter,
            tol=self.tol,
            n_restarts=self.n_restarts,
            max_skills=self.max_skills,
            factorize=self.factorize,
            rng=_stream(self.random_state, "em", "restarts"),
        )
        self.slip_ = self.state_.slip
        self.guess_ = self.state_.guess
        self.X_fit_ = X
        self.profiles_ = map_profiles(self.state_, X)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "state_")
        return map_profiles(self.state_, _values(X))

    def fit_transform(self, X, y=None):
        return self.fit(X).profiles_

    def predict_proba(self, X=None):
        check_is_fitted(self, "state_")
        return em_predict_matrix(self.state_, self.X_fit_ if X is None else _values(X))

    def predict(self, X=None):
        return (self.predict_proba(X) >= 0.5).astype(np.int8)


class HbcaLabeler(BaseEstimator):
    """Unsupervised Q-matrix labeling by bidirectional calibration.

    Parameters mirror :class:`~cogdiag.hbca.HbcaConfig`; ``random_state`` must
    be an int so that runs are reproducible and worker-count independent.

    Attributes
    ----------
    q_matrix_ : QMatrix
    result_ : HbcaResult
    report_ : list of per-iteration dicts
    """

    def __init__(
        self,
        eta=0.85,
        dim_qv_range=(5, 9),
        population_size=100,
        iterations=100,
        replace_count=40,
        flip_prob=0.2,
        leaf_density=0.35,
        da_sample_size=100,
        selecting_goal="SD",
        validation_ratio=0.2,
        n_workers=1,
        random_state=0,
    ):
        self.eta = eta
        self.dim_qv_range = dim_qv_range
        self.population_size = population_size
        self.iterations = iterations
        self.replace_count = replace_count
        self.flip_prob = flip_prob
        self.leaf_density = leaf_density
        self.da_sample_size = da_sample_size
        self.selecting_goal = selecting_goal
        self.validation_ratio = validation_ratio
        self.n_workers = n_workers
        self.random_state = random_state

    def config(self) -> HbcaConfig:
        return HbcaConfig(
            eta=self.eta,
            dim_qv_range=tuple(self.dim_qv_range),
            population_size=self.population_size,
            iterations=self.iterations,
            replace_count=self.replace_count,
            flip_prob=self.flip_prob,
            leaf_density=self.leaf_density,
            da_sample_size=self.da_sample_size,
            selecting_goal=self.selecting_goal,
            validation_ratio=self.validation_ratio,
        )

    def fit(self, X, y=None, split=None):
        """Label a Q-matrix from the observed cells of ``X``.

        ``split`` optionally restricts training to a mask or :class:`DataSplit`.
        """
        qids = X.question_ids if isinstance(X, ResponseMatrix) else None
        values = _values(X)
        if not isinstance(self.random_state, (int, np.integer)):
            raise ConfigError("HbcaLabeler needs an integer random_state")
        self.result_ = hbca_run(
            values, split, self.config(), seed=int(self.random_state), n_workers=self.n_workers, question_ids=qids
        )
        self.q_matrix_ = self.result_.best
        self.report_ = self.result_.report
        self.n_features_in_ = values.shape[1]
        return self
