"""Synthetic DINA data with known ground truth, plus a brute-force profile oracle."""
from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass, field

import numpy as np

from ._validation import ConfigError, check_fraction
from .core.rng import derive_rng
from .core.types import QMatrix, ResponseMatrix

__all__ = ["GenerativeSpec", "SyntheticData", "generate", "brute_force_feasible_profiles", "rate_curve"]

RATE_CAP = 0.95


def rate_curve(model, index) -> np.ndarray:
    """Evaluate a slip/guess model at integer levels or deficiencies.

    ``model`` is a constant rate or an ``(intercept, slope)`` pair; linear
    models are clipped to ``[0, 0.95]``.
    """
    index = np.asarray(index, dtype=np.float64)
    if np.isscalar(model) or np.ndim(model) == 0:
        return np.full(index.shape, float(model))
    a, b = model
    return np.clip(a + b * index, 0.0, RATE_CAP)


@dataclass(frozen=True)
class GenerativeSpec:
    n_students: int
    n_questions: int
    n_skills: int
    q_density: float = 0.4
    profile_density: float = 0.5
    slip: float | tuple = 0.1
    guess: float | tuple = 0.1
    mask_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("n_students", "n_questions", "n_skills"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")
        check_fraction(self.q_density, "q_density", low_open=True, high_open=True)
        check_fraction(self.profile_density, "profile_density", low_open=True, high_open=True)
        check_fraction(self.mask_rate, "mask_rate", high_open=True)
        for name in ("slip", "guess"):
            model = getattr(self, name)
            if np.isscalar(model):
                check_fraction(model, name, high=1.0)
            elif len(model) != 2:
                raise ConfigError(f"{name} must be a rate or an (intercept, slope) pair")

    def to_dict(self) -> dict:
        d = asdict(self)
        for name in ("slip", "guess"):
            if not np.isscalar(d[name]):
                d[name] = list(d[name])
        return d


@dataclass(frozen=True)
class SyntheticData:
    q: QMatrix
    profiles: np.ndarray
    responses: ResponseMatrix
    ideal: np.ndarray
    slip_prob: np.ndarray
    guess_prob: np.ndarray
    spec: GenerativeSpec = field(repr=False)

    def truth_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "profiles": self.profiles.tolist(),
            "q": self.q.entries.tolist(),
            "slip_prob": self.slip_prob.tolist(),
            "guess_prob": self.guess_prob.tolist(),
        }


def _nonzero_rows(rng, n, k, density):
    rows = (rng.random((n, k)) < density).astype(np.int8)
    while True:
        empty = rows.sum(axis=1) == 0
        if not empty.any():
            return rows
        rows[empty] = (rng.random((int(empty.sum()), k)) < density).astype(np.int8)


def generate(spec: GenerativeSpec) -> SyntheticData:
    """Sample Q, profiles and responses.

    Slip probability for cell ``(i, j)`` follows ``spec.slip`` at the student's
    level; guess probability follows ``spec.guess`` at the student's deficiency
    on question ``j``.
    """
    s, m, k = spec.n_students, spec.n_questions, spec.n_skills
    q = _nonzero_rows(derive_rng(spec.seed, "synth", "q"), m, k, spec.q_density)
    profiles = (derive_rng(spec.seed, "synth", "profiles").random((s, k)) < spec.profile_density).astype(np.int8)

    level = profiles.sum(axis=1)
    defic = q.sum(axis=1)[None, :].astype(np.int64) - profiles.astype(np.int64) @ q.T.astype(np.int64)
    ideal = defic == 0
    slip_prob = np.broadcast_to(rate_curve(spec.slip, level)[:, None], (s, m)).copy()
    guess_prob = rate_curve(spec.guess, defic)
    p_correct = np.where(ideal, 1.0 - slip_prob, guess_prob)
    values = (derive_rng(spec.seed, "synth", "responses").random((s, m)) < p_correct).astype(np.float64)

    if spec.mask_rate > 0:
        hidden = derive_rng(spec.seed, "synth", "mask").random((s, m)) < spec.mask_rate
        # keep one observed cell per student and per question
        hidden[np.arange(s), np.arange(s) % m] = False
        hidden[np.arange(m) % s, np.arange(m)] = False
        values[hidden] = np.nan

    qids = tuple(f"q{j}" for j in range(m))
    return SyntheticData(
        q=QMatrix(q, qids),
        profiles=profiles,
        responses=ResponseMatrix(values, tuple(f"s{i}" for i in range(s)), qids),
        ideal=ideal,
        slip_prob=slip_prob,
        guess_prob=guess_prob,
        spec=spec,
    )


def brute_force_feasible_profiles(sets, n_skills: int) -> set:
    """Every binary profile that answers each right question right and each wrong one wrong.

    ``sets`` is anything with ``right`` and ``wrong`` sequences of question
    vectors. Profiles are returned as tuples of ints.
    """
    if n_skills > 20:
        raise ConfigError("brute-force enumeration is limited to 20 skills")
    right = [tuple(int(b) for b in v) for v in sets.right]
    wrong = [tuple(int(b) for b in v) for v in sets.wrong]

    def solves(alpha, qvec):
        return all(a >= b for a, b in zip(alpha, qvec))

    feasible = set()
    for alpha in itertools.product((0, 1), repeat=n_skills):
        if all(solves(alpha, v) for v in right) and not any(solves(alpha, v) for v in wrong):
            feasible.add(alpha)
    return feasible
