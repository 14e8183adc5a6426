"""Slip/guess estimation from ESVE outputs and correctness prediction.

Two parameterizations are supported:

``SI``
    one slip and one guess rate per question, as in plain DINA.
``SD``
    slip rates indexed by the student's level (number of mastered skills) and
    guess rates indexed by the student's deficiency on the question (number of
    tested skills the student lacks).

Rates are raw count ratios. Empty SD buckets back off to the question's SI
rate, and questions nobody answered in training back off to the global mean.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._validation import ConfigError, check_binary_vector, check_q_matrix
from .esve import EsveBatch

__all__ = [
    "SlipGuessTable",
    "ideal_response",
    "ideal_matrix",
    "deficiency",
    "deficiency_matrix",
    "estimate_si",
    "estimate_sd",
    "estimate_table",
    "predict_cell",
    "predict_matrix",
    "predict_all",
    "clamp_rates",
]

LOG_EPS = 1e-6


def ideal_response(profile, qvec) -> int:
    """1 when the profile has every skill the question tests."""
    profile = np.asarray(getattr(profile, "bits", profile))
    qvec = np.asarray(qvec)
    if profile.shape != qvec.shape:
        raise ValueError(f"length mismatch: {profile.shape} vs {qvec.shape}")
    return int(np.all(profile >= qvec))


def deficiency(profile, qvec) -> int:
    """Number of skills the question tests that the profile lacks."""
    profile = np.asarray(getattr(profile, "bits", profile))
    qvec = np.asarray(qvec)
    if profile.shape != qvec.shape:
        raise ValueError(f"length mismatch: {profile.shape} vs {qvec.shape}")
    return int(np.sum((qvec == 1) & (profile == 0)))


def deficiency_matrix(profiles, Q) -> np.ndarray:
    """``(n_students, n_questions)`` deficiency counts."""
    A = np.asarray(profiles, dtype=np.int32)
    Qi = np.asarray(Q, dtype=np.int32)
    return Qi.sum(axis=1)[None, :] - A @ Qi.T


def ideal_matrix(profiles, Q) -> np.ndarray:
    """``(n_students, n_questions)`` ideal responses as a boolean array."""
    return deficiency_matrix(profiles, Q) == 0


def clamp_rates(rates, eps: float = LOG_EPS):
    """Keep rates inside ``[eps, 1 - eps]`` before taking logs."""
    return np.clip(rates, eps, 1.0 - eps)


def _ratio(num, den):
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    out = np.full(np.broadcast(num, den).shape, np.nan)
    np.divide(num, den, out=out, where=den > 0)
    return out


@dataclass(frozen=True, eq=False)
class SlipGuessTable:
    """Fitted slip/guess counts and the rates derived from them.

    Attributes
    ----------
    mode : {"SI", "SD"}
        Parameterization used by :func:`predict_cell` and :func:`predict_matrix`.
    slip_num, slip_den, guess_num, guess_den : ndarray of shape (n_questions,)
        Per-question tallies.
    sd_slip_num, sd_slip_den : ndarray of shape (n_questions, n_skills + 1)
        Tallies split by student level.
    sd_guess_num, sd_guess_den : ndarray of shape (n_questions, n_skills + 1)
        Tallies split by deficiency on the question.
    smoothing : float
        Pseudo-count pulling each rate towards its back-off value (0 = raw counts).
    """

    mode: str
    slip_num: np.ndarray
    slip_den: np.ndarray
    guess_num: np.ndarray
    guess_den: np.ndarray
    sd_slip_num: np.ndarray = None
    sd_slip_den: np.ndarray = None
    sd_guess_num: np.ndarray = None
    sd_guess_den: np.ndarray = None
    smoothing: float = 0.0

    def __post_init__(self):
        if self.mode not in ("SI", "SD"):
            raise ValueError(f"mode must be 'SI' or 'SD', got {self.mode!r}")
        if self.mode == "SD" and self.sd_slip_den is None:
            raise ValueError("SD table needs level/deficiency tallies")

    @classmethod
    def from_rates(cls, slip, guess) -> "SlipGuessTable":
        """An SI table carrying fixed rates (counts of one pseudo-observation)."""
        slip = np.asarray(slip, dtype=np.float64)
        guess = np.asarray(guess, dtype=np.float64)
        ones = np.ones_like(slip)
        return cls("SI", slip.copy(), ones, guess.copy(), ones.copy())

    @property
    def n_questions(self) -> int:
        return self.slip_num.shape[0]

    @property
    def global_slip(self) -> float:
        den = self.slip_den.sum()
        return float(self.slip_num.sum() / den) if den > 0 else 0.0

    @property
    def global_guess(self) -> float:
        den = self.guess_den.sum()
        return float(self.guess_num.sum() / den) if den > 0 else 0.0

    def _si(self, num, den, fallback):
        lam = self.smoothing
        rate = _ratio(num + lam * fallback, den + lam)
        return np.where(np.isnan(rate), fallback, rate)

    @property
    def si_slip(self) -> np.ndarray:
        return self._si(self.slip_num, self.slip_den, self.global_slip)

    @property
    def si_guess(self) -> np.ndarray:
        return self._si(self.guess_num, self.guess_den, self.global_guess)

    def _sd(self, num, den, si):
        if num is None:
            return None
        lam = self.smoothing
        rate = _ratio(num + lam * si[:, None], den + lam)
        rate[den == 0] = np.nan
        return rate

    @property
    def sd_slip(self) -> np.ndarray:
        """Slip rate per (question, level); NaN marks an empty bucket."""
        return self._sd(self.sd_slip_num, self.sd_slip_den, self.si_slip)

    @property
    def sd_guess(self) -> np.ndarray:
        """Guess rate per (question, deficiency); NaN marks an empty bucket."""
        return self._sd(self.sd_guess_num, self.sd_guess_den, self.si_guess)

    def slip_for(self, question: int, level: int) -> float:
        if self.mode == "SD":
            r = self.sd_slip[question, level]
            if not np.isnan(r):
                return float(r)
        return float(self.si_slip[question])

    def guess_for(self, question: int, deficiency: int) -> float:
        if self.mode == "SD":
            r = self.sd_guess[question, deficiency]
            if not np.isnan(r):
                return float(r)
        return float(self.si_guess[question])

    def with_mode(self, mode: str) -> "SlipGuessTable":
        return SlipGuessTable(
            mode,
            self.slip_num,
            self.slip_den,
            self.guess_num,
            self.guess_den,
            self.sd_slip_num,
            self.sd_slip_den,
            self.sd_guess_num,
            self.sd_guess_den,
            self.smoothing,
        )

    def to_dict(self, question_ids=None) -> dict:
        def lst(a):
            return None if a is None else np.asarray(a).tolist()

        def rates(a):
            return None if a is None else [[None if np.isnan(v) else float(v) for v in row] for row in a]

        return {
            "mode": self.mode,
            "smoothing": self.smoothing,
            "question_ids": list(question_ids) if question_ids is not None else None,
            "si_slip": lst(self.si_slip),
            "si_guess": lst(self.si_guess),
            "counts": {
                "slip_num": lst(self.slip_num),
                "slip_den": lst(self.slip_den),
                "guess_num": lst(self.guess_num),
                "guess_den": lst(self.guess_den),
                "sd_slip_num": lst(self.sd_slip_num),
                "sd_slip_den": lst(self.sd_slip_den),
                "sd_guess_num": lst(self.sd_guess_num),
                "sd_guess_den": lst(self.sd_guess_den),
            },
            "sd_slip": rates(self.sd_slip),
            "sd_guess": rates(self.sd_guess),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SlipGuessTable":
        c = d["counts"]

        def arr(key):
            return None if c.get(key) is None else np.asarray(c[key], dtype=np.float64)

        return cls(
            d["mode"],
            arr("slip_num"),
            arr("slip_den"),
            arr("guess_num"),
            arr("guess_den"),
            arr("sd_slip_num"),
            arr("sd_slip_den"),
            arr("sd_guess_num"),
            arr("sd_guess_den"),
            float(d.get("smoothing", 0.0)),
        )


DENOMINATORS = ("ideal", "examinees")


def estimate_table(
    profiles, Q, seen, slipped, guessed, mode: str = "SD", smoothing: float = 0.0, denominator: str = "ideal"
) -> SlipGuessTable:
    """Tally slip/guess events.

    Parameters
    ----------
    profiles : ndarray of shape (n_students, n_skills)
    Q : ndarray of shape (n_questions, n_skills)
    seen : bool ndarray of shape (n_students, n_questions)
        Training cells the student answered (the examinees of each question).
    slipped, guessed : bool ndarray of shape (n_students, n_questions)
        Cells counted as slips (answered wrong, flagged unreliable or covered by
        the profile) and guesses (answered right, flagged unreliable).
    denominator : {"ideal", "examinees"}
        ``"ideal"`` counts slips only among examinees the profile predicts to
        be right (guesses among those predicted wrong), so the rates estimate
        the conditional DINA parameters. ``"examinees"`` divides both by every
        examinee of the question.
    """
    if denominator not in DENOMINATORS:
        raise ConfigError(f"denominator must be one of {DENOMINATORS}, got {denominator!r}")
    Q = check_q_matrix(Q, allow_zero_rows=True)
    profiles = np.asarray(profiles, dtype=np.int8)
    seen = np.asarray(seen, dtype=bool)
    slipped = np.asarray(slipped, dtype=bool) & seen
    guessed = np.asarray(guessed, dtype=bool) & seen
    m, k = Q.shape
    levels = profiles.sum(axis=1).astype(np.intp)
    defic = deficiency_matrix(profiles, Q)
    if denominator == "ideal":
        # flags the final profile contradicts (tied pairs) are left out entirely
        slip_pool = seen & (defic == 0)
        guess_pool = seen & (defic > 0)
        slipped = slipped & slip_pool
        guessed = guessed & guess_pool
    else:
        slip_pool = guess_pool = seen

    # one-hot over level / deficiency buckets 0..K
    level_onehot = np.eye(k + 1, dtype=np.float64)[levels]  # (S, K+1)
    sd_slip_num = slipped.T.astype(np.float64) @ level_onehot
    sd_slip_den = slip_pool.T.astype(np.float64) @ level_onehot
    sd_guess_num = np.zeros((m, k + 1))
    sd_guess_den = np.zeros((m, k + 1))
    for d in range(k + 1):
        at_d = defic == d
        sd_guess_num[:, d] = (guessed & at_d).sum(axis=0)
        sd_guess_den[:, d] = (guess_pool & at_d).sum(axis=0)

    return SlipGuessTable(
        mode,
        slipped.sum(axis=0).astype(np.float64),
        slip_pool.sum(axis=0).astype(np.float64),
        guessed.sum(axis=0).astype(np.float64),
        guess_pool.sum(axis=0).astype(np.float64),
        sd_slip_num,
        sd_slip_den,
        sd_guess_num,
        sd_guess_den,
        float(smoothing),
    )


def _from_batch(batch: EsveBatch, Q, mode, smoothing, denominator):
    return estimate_table(
        batch.profiles, Q, batch.right | batch.wrong, batch.slipped, batch.guessed, mode, smoothing, denominator
    )


def estimate_si(batch: EsveBatch, Q, smoothing: float = 0.0, denominator: str = "ideal") -> SlipGuessTable:
    """Per-question rates: slipped (resp. guessed) examinees over the denominator pool."""
    return _from_batch(batch, Q, "SI", smoothing, denominator)


def estimate_sd(batch: EsveBatch, Q, smoothing: float = 0.0, denominator: str = "ideal") -> SlipGuessTable:
    """Level-indexed slips and deficiency-indexed guesses, with SI back-off."""
    return _from_batch(batch, Q, "SD", smoothing, denominator)


def predict_cell(profile, qvec, table: SlipGuessTable, question: int) -> float:
    bits = np.asarray(getattr(profile, "bits", profile))
    qvec = check_binary_vector(qvec, bits.shape[0], "question vector")
    if ideal_response(bits, qvec):
        return 1.0 - table.slip_for(question, int(bits.sum()))
    return table.guess_for(question, deficiency(bits, qvec))


def predict_matrix(profiles, Q, table: SlipGuessTable) -> np.ndarray:
    """``(n_students, n_questions)`` probabilities of a correct answer."""
    profiles = np.asarray(profiles, dtype=np.int8)
    Q = check_q_matrix(Q, allow_zero_rows=True)
    defic = deficiency_matrix(profiles, Q)
    xi = defic == 0
    s = np.broadcast_to(table.si_slip[None, :], xi.shape).copy()
    g = np.broadcast_to(table.si_guess[None, :], xi.shape).copy()
    if table.mode == "SD":
        cols = np.arange(Q.shape[0])[None, :]
        levels = profiles.sum(axis=1)[:, None]
        sd_s = table.sd_slip[cols, levels]
        sd_g = table.sd_guess[cols, defic]
        s = np.where(np.isnan(sd_s), s, sd_s)
        g = np.where(np.isnan(sd_g), g, sd_g)
    return np.where(xi, 1.0 - s, g)


def predict_all(profiles, Q, table: SlipGuessTable, cells, has_data=None, fallback=None, return_flags=False):
    """Probabilities for the ``(student, question)`` pairs in ``cells``.

    Students flagged ``has_data == False`` get ``fallback[question]`` (typically
    the question's training accuracy) instead of a model prediction.
    """
    cells = np.asarray(cells, dtype=np.intp).reshape(-1, 2)
    if len(cells) == 0:
        empty = np.zeros(0)
        return (empty, np.zeros(0, dtype=bool)) if return_flags else empty
    Q = check_q_matrix(Q, allow_zero_rows=True)
    if cells[:, 1].max() >= Q.shape[0]:
        raise IndexError("target question not present in Q-matrix")
    probs = predict_matrix(profiles, Q, table)[cells[:, 0], cells[:, 1]]
    flags = np.zeros(len(cells), dtype=bool)
    if has_data is not None:
        flags = ~np.asarray(has_data, dtype=bool)[cells[:, 0]]
        if flags.any():
            if fallback is None:
                raise ValueError("students without training data need a fallback prediction")
            probs = np.where(flags, np.asarray(fallback)[cells[:, 1]], probs)
    return (probs, flags) if return_flags else probs
