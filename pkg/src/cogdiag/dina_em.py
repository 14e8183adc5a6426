"""DINA fitted by expectation-maximization over latent skill classes.

The exact path enumerates all ``2**K`` profiles. When every question tests a
single skill the likelihood factorizes over skills; the factorized path then
runs a two-class mixture per skill under independent skill priors, which keeps
large identity-like Q-matrices tractable.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logsumexp

from ._validation import ConfigError, check_mask, check_q_matrix, check_responses
from .core.rng import as_generator
from .predict import clamp_rates

__all__ = [
    "EmState",
    "enumerate_profiles",
    "em_fit",
    "em_posterior",
    "em_predict",
    "em_predict_matrix",
    "map_profiles",
    "is_single_skill",
]

log = logging.getLogger(__name__)

DEFAULT_MAX_SKILLS = 15


@dataclass(frozen=True, eq=False)
class EmState:
    """Fitted DINA parameters.

    ``priors`` is a distribution over the ``2**K`` classes on the exact path and
    a vector of per-skill mastery probabilities on the factorized path.
    """

    mode: str
    q: np.ndarray
    priors: np.ndarray
    slip: np.ndarray
    guess: np.ndarray
    log_likelihood_trace: list = field(default_factory=list)
    converged: bool = False

    @property
    def n_iter(self) -> int:
        return len(self.log_likelihood_trace)

    @property
    def log_likelihood(self) -> float:
        return self.log_likelihood_trace[-1]

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "q": self.q.tolist(),
            "priors": self.priors.tolist(),
            "slip": self.slip.tolist(),
            "guess": self.guess.tolist(),
            "log_likelihood_trace": [float(v) for v in self.log_likelihood_trace],
            "converged": self.converged,
        }

    @classmethod
    def from_dict(cls, d) -> "EmState":
        return cls(
            d["mode"],
            np.asarray(d["q"], dtype=np.int8),
            np.asarray(d["priors"], dtype=np.float64),
            np.asarray(d["slip"], dtype=np.float64),
            np.asarray(d["guess"], dtype=np.float64),
            list(d["log_likelihood_trace"]),
            bool(d["converged"]),
        )


def enumerate_profiles(n_skills: int) -> np.ndarray:
    """All ``2**K`` binary profiles; row ``l`` is the binary expansion of ``l`` (skill 0 first)."""
    codes = np.arange(2**n_skills)
    return ((codes[:, None] >> np.arange(n_skills)[None, :]) & 1).astype(np.int8)


def is_single_skill(Q) -> bool:
    return bool((np.asarray(Q).sum(axis=1) == 1).all())


def _ideal(classes, Q):
    return (classes.astype(np.int32) @ Q.T.astype(np.int32)) == Q.sum(axis=1)[None, :]


def _evidence(X, cells):
    obs = cells & ~np.isnan(X)
    right = np.where(obs, np.nan_to_num(X), 0.0)
    wrong = obs.astype(np.float64) - right
    return obs, right, wrong


def _exact_estep(right, wrong, eta, priors, slip, guess):
    p = clamp_rates(np.where(eta, 1.0 - slip[None, :], guess[None, :]))
    loglik = right @ np.log(p).T + wrong @ np.log1p(-p).T
    with np.errstate(divide="ignore"):
        joint = loglik + np.log(priors)[None, :]
    norm = logsumexp(joint, axis=1)
    post = np.exp(joint - norm[:, None])
    return post, float(norm.sum())


def _factor_estep(right, wrong, Q, priors, slip, guess):
    s = clamp_rates(slip)
    g = clamp_rates(guess)
    Qf = Q.astype(np.float64)
    ll1 = (right * np.log1p(-s) + wrong * np.log(s)) @ Qf
    ll0 = (right * np.log(g) + wrong * np.log1p(-g)) @ Qf
    pi = clamp_rates(priors)
    a = ll1 + np.log(pi)[None, :]
    b = ll0 + np.log1p(-pi)[None, :]
    norm = np.logaddexp(a, b)
    return expit(a - b), float(norm.sum())


def _mstep_rates(obs, right, p_ideal, slip, guess):
    n1 = (obs * p_ideal).sum(axis=0)
    r1 = (right * p_ideal).sum(axis=0)
    n0 = (obs * (1.0 - p_ideal)).sum(axis=0)
    r0 = (right * (1.0 - p_ideal)).sum(axis=0)
    new_slip = np.array(slip, copy=True)
    new_guess = np.array(guess, copy=True)
    # a rate with no expected evidence keeps its previous value
    ok1 = n1 > 1e-12
    ok0 = n0 > 1e-12
    new_slip[ok1] = (n1[ok1] - r1[ok1]) / n1[ok1]
    new_guess[ok0] = r0[ok0] / n0[ok0]
    return clamp_rates(new_slip), clamp_rates(new_guess)


def _run(X, Q, cells, mode, priors, slip, guess, max_iter, tol):
    obs, right, wrong = _evidence(X, cells)
    has_data = obs.any(axis=1)
    if mode == "exact":
        eta = _ideal(enumerate_profiles(Q.shape[1]), Q)
        estep = lambda pr, s, g: _exact_estep(right, wrong, eta, pr, s, g)  # noqa: E731
    else:
        skill_seen = (obs.astype(np.int32) @ Q.astype(np.int32)) > 0
        estep = lambda pr, s, g: _factor_estep(right, wrong, Q, pr, s, g)  # noqa: E731

    trace, converged = [], False
    for _ in range(max_iter):
        post, ll = estep(priors, slip, guess)
        if not np.isfinite(ll):
            raise FloatingPointError("EM log-likelihood is not finite")
        trace.append(ll)
        if len(trace) > 1 and trace[-1] - trace[-2] < tol:
            converged = True
            break
        if mode == "exact":
            p_ideal = post @ eta.astype(np.float64)
            if has_data.any():
                priors = post[has_data].mean(axis=0)
        else:
            p_ideal = post @ Q.T.astype(np.float64)
            w = skill_seen.astype(np.float64)
            mass = w.sum(axis=0)
            priors = np.where(mass > 0, (post * w).sum(axis=0) / np.maximum(mass, 1), priors)
        slip, guess = _mstep_rates(obs, right, p_ideal, slip, guess)
    else:
        _, ll = estep(priors, slip, guess)
        trace.append(ll)
    return EmState(mode, Q, np.asarray(priors, dtype=np.float64), slip, guess, trace, converged)


def em_fit(
    X,
    Q,
    cells=None,
    *,
    max_iter: int = 500,
    tol: float = 1e-6,
    n_restarts: int = 1,
    init_slip: float = 0.2,
    init_guess: float = 0.2,
    max_skills: int = DEFAULT_MAX_SKILLS,
    factorize="auto",
    rng=None,
) -> EmState:
    """Fit slip, guess and class priors on the observed training cells.

    The first restart starts from ``init_slip``/``init_guess`` and uniform
    priors; further restarts draw random starting points. The restart with the
    highest final log-likelihood wins.
    """
    X = check_responses(X)
    Q = check_q_matrix(Q, X.shape[1])
    cells = check_mask(cells, X.shape)
    m, k = Q.shape
    if factorize == "auto":
        use_factor = is_single_skill(Q)
    else:
        use_factor = bool(factorize)
        if use_factor and not is_single_skill(Q):
            raise ConfigError("factorized EM needs every question to test exactly one skill")
    mode = "factorized" if use_factor else "exact"
    if mode == "exact" and k > max_skills:
        raise ConfigError(
            f"{k} skills exceed the class-enumeration limit of {max_skills}; "
            "use the ESVE estimators or raise max_skills"
        )
    log.info("DINA-EM: %s path (%d skills, %d questions)", mode, k, m)
    if n_restarts < 1:
        raise ConfigError("n_restarts must be >= 1")

    gen = as_generator(rng) if n_restarts > 1 else None
    best = None
    for r in range(n_restarts):
        if r == 0:
            slip = np.full(m, float(init_slip))
            guess = np.full(m, float(init_guess))
            priors = np.full(k, 0.5) if use_factor else np.full(2**k, 1.0 / 2**k)
        else:
            slip = gen.uniform(0.05, 0.35, m)
            guess = gen.uniform(0.05, 0.35, m)
            priors = gen.uniform(0.2, 0.8, k) if use_factor else gen.dirichlet(np.ones(2**k))
        state = _run(X, Q, cells, mode, priors, slip, guess, max_iter, tol)
        if best is None or state.log_likelihood > best.log_likelihood:
            best = state
    return best


def em_posterior(state: EmState, X, cells=None) -> np.ndarray:
    """Posterior over classes (exact) or per-skill mastery probabilities (factorized)."""
    X = check_responses(X)
    cells = check_mask(cells, X.shape)
    _, right, wrong = _evidence(X, cells)
    if state.mode == "exact":
        eta = _ideal(enumerate_profiles(state.q.shape[1]), state.q)
        post, _ = _exact_estep(right, wrong, eta, state.priors, state.slip, state.guess)
    else:
        post, _ = _factor_estep(right, wrong, state.q, state.priors, state.slip, state.guess)
    return post


def em_predict_matrix(state: EmState, X, cells=None) -> np.ndarray:
    """Posterior-predictive probability of a correct answer for every cell.

    Students without evidence get the prior-weighted prediction.
    """
    post = em_posterior(state, X, cells)
    if state.mode == "exact":
        eta = _ideal(enumerate_profiles(state.q.shape[1]), state.q).astype(np.float64)
        p_ideal = post @ eta
    else:
        p_ideal = post @ state.q.T.astype(np.float64)
    return p_ideal * (1.0 - state.slip)[None, :] + (1.0 - p_ideal) * state.guess[None, :]


def em_predict(state: EmState, X, cells, target_cells) -> np.ndarray:
    target_cells = np.asarray(target_cells, dtype=np.intp).reshape(-1, 2)
    if len(target_cells) == 0:
        return np.zeros(0)
    probs = em_predict_matrix(state, X, cells)
    return probs[target_cells[:, 0], target_cells[:, 1]]


def map_profiles(state: EmState, X, cells=None) -> np.ndarray:
    """Most probable profile per student (lowest class index on ties)."""
    post = em_posterior(state, X, cells)
    if state.mode == "exact":
        return enumerate_profiles(state.q.shape[1])[post.argmax(axis=1)]
    return (post >= 0.5).astype(np.int8)
