"""Unsupervised Q-matrix labeling by bidirectional calibration.

Pieces:

* a covering graph built from conditional accuracies between questions,
* tree-spanning initialization (QST): easier questions are labeled first, and
  a question covering already-labeled ones starts from the OR of their vectors,
* the dual algorithm (DA): ESVE with students and questions swapped, which
  re-estimates each question vector from the students' current profiles,
* a population loop alternating ESVE and DA per candidate, scored by
  validation MAE, with the worst candidates re-initialized on stagnation.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from ._validation import ConfigError, check_fraction, check_mask, check_responses
from .core.rng import as_generator, derive_rng
from .core.split import split_mask
from .core.types import DataSplit, QMatrix
from .esve import esve_batch, peel_conflicts
from .predict import estimate_sd, estimate_si, predict_matrix

__all__ = [
    "HbcaConfig",
    "CoveringGraph",
    "CandidateQ",
    "DaBounds",
    "HbcaResult",
    "build_covering_graph",
    "qst_init",
    "da_conflict_condition",
    "da_bounds",
    "da_solve",
    "da_solve_all",
    "evaluate_candidate",
    "hbca_run",
]

log = logging.getLogger(__name__)

GOALS = ("SI", "SD", "EM")


@dataclass(frozen=True)
class HbcaConfig:
    eta: float = 0.85
    dim_qv_range: tuple = (5, 9)
    population_size: int = 100
    iterations: int = 100
    replace_count: int = 40
    flip_prob: float = 0.2
    leaf_density: float = 0.35
    da_sample_size: int = 100
    selecting_goal: str = "SD"
    validation_ratio: float = 0.2

    def __post_init__(self):
        check_fraction(self.eta, "eta", low_open=True, high_open=True)
        check_fraction(self.flip_prob, "flip_prob")
        check_fraction(self.leaf_density, "leaf_density", low_open=True)
        check_fraction(self.validation_ratio, "validation_ratio", low_open=True, high_open=True)
        lo, hi = (int(v) for v in self.dim_qv_range)
        if lo < 1 or hi < lo:
            raise ConfigError(f"dim_qv_range must satisfy 1 <= lo <= hi, got {self.dim_qv_range}")
        object.__setattr__(self, "dim_qv_range", (lo, hi))
        if self.iterations < 0:
            raise ConfigError("iterations must be >= 0")
        if self.population_size < 1:
            raise ConfigError("population_size must be >= 1")
        if not 0 <= self.replace_count <= self.population_size:
            raise ConfigError("need population_size >= replace_count >= 0")
        if self.da_sample_size < 1:
            raise ConfigError("da_sample_size must be >= 1")
        if self.selecting_goal not in GOALS:
            raise ConfigError(f"selecting_goal must be one of {GOALS}")

    @property
    def dims(self) -> range:
        return range(self.dim_qv_range[0], self.dim_qv_range[1] + 1)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dim_qv_range"] = list(self.dim_qv_range)
        return d


@dataclass(frozen=True)
class CoveringGraph:
    """Conditional accuracies ``beta[w, z] = P(z right | w right)`` and the edges above ``eta``.

    ``beta`` is NaN where no student answered ``w`` right and also answered ``z``.
    An edge ``(w, z)`` reads "w covers z": ``w`` is the parent, ``z`` the child.
    """

    beta: np.ndarray
    edges: tuple
    parent_count: np.ndarray
    eta: float

    def children(self, w: int) -> list:
        return [z for (p, z) in self.edges if p == w]


def build_covering_graph(X, cells=None, eta: float = 0.85) -> CoveringGraph:
    check_fraction(eta, "eta", low_open=True, high_open=True)
    X = check_responses(X)
    cells = check_mask(cells, X.shape)
    seen = (cells & ~np.isnan(X)).astype(np.int64)
    right = (cells & (X == 1)).astype(np.int64)
    both_right = right.T @ right
    w_right_z_seen = right.T @ seen
    beta = np.full(both_right.shape, np.nan)
    np.divide(both_right, w_right_z_seen, out=beta, where=w_right_z_seen > 0)
    m = X.shape[1]
    is_edge = np.nan_to_num(beta, nan=-1.0) >= eta
    is_edge[np.arange(m), np.arange(m)] = False
    edges = tuple((int(w), int(z)) for w, z in np.argwhere(is_edge))
    return CoveringGraph(beta, edges, is_edge.sum(axis=0).astype(np.int64), float(eta))


def _random_nonzero_row(rng, k, density):
    while True:
        row = (rng.random(k) < density).astype(np.int8)
        if row.any():
            return row


def qst_init(graph: CoveringGraph, dim_qv: int, flip_prob: float = 0.2, leaf_density: float = 0.35, rng=None):
    """Span the question tree and return an ``(n_questions, dim_qv)`` Q-matrix.

    Questions with more parents (easier ones) are labeled first. A question whose
    children are already labeled takes the OR of their vectors and then flips
    each remaining zero to one with probability ``flip_prob``; otherwise it is a
    leaf with Bernoulli(``leaf_density``) bits.
    """
    if dim_qv < 1:
        raise ConfigError("dim_qv must be >= 1")
    rng = as_generator(rng)
    m = graph.parent_count.shape[0]
    children = [[] for _ in range(m)]
    for w, z in graph.edges:
        children[w].append(z)
    order = sorted(range(m), key=lambda j: (-int(graph.parent_count[j]), j))
    Q = np.zeros((m, dim_qv), dtype=np.int8)
    assigned = np.zeros(m, dtype=bool)
    for w in order:
        done = [z for z in children[w] if assigned[z]]
        if done:
            row = Q[done].max(axis=0)
            flips = (rng.random(dim_qv) < flip_prob) & (row == 0)
            row = row | flips.astype(np.int8)
        else:
            row = _random_nonzero_row(rng, dim_qv, leaf_density)
        Q[w] = row
        assigned[w] = True
    return Q


def da_conflict_condition(correct_profile, wrong_profile) -> bool:
    """True when the student who got the question right has no skill the other lacks."""
    a = np.asarray(correct_profile)
    b = np.asarray(wrong_profile)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    return bool(np.all(a <= b))


@dataclass(frozen=True)
class DaBounds:
    """Bounds on one question vector derived from its solvers and non-solvers.

    ``upper[k] = 0`` forces the skill out; ``lower_indicator[k] = 1`` forces it in.
    Student index arrays refer to rows of the response matrix.
    """

    upper: np.ndarray
    lower_indicator: np.ndarray
    correct: np.ndarray
    wrong: np.ndarray
    removed_correct: np.ndarray
    removed_wrong: np.ndarray
    reliable_wrong_profiles: np.ndarray


def _subsample(idx, size, rng):
    if size is None or len(idx) <= size:
        return idx
    return np.sort(rng.choice(idx, size=size, replace=False))


def da_bounds(question: int, profiles, X, cells=None, da_sample_size: int | None = None, rng=None) -> DaBounds:
    X = check_responses(X)
    cells = check_mask(cells, X.shape)
    profiles = np.asarray(profiles, dtype=np.int8)
    col = X[:, question]
    seen = cells[:, question] & ~np.isnan(col)
    if da_sample_size is not None:
        rng = as_generator(rng)
    correct = _subsample(np.flatnonzero(seen & (col == 1)), da_sample_size, rng)
    wrong = _subsample(np.flatnonzero(seen & (col == 0)), da_sample_size, rng)
    A_t, A_f = profiles[correct], profiles[wrong]
    if len(correct) and len(wrong):
        conflict = (A_t[:, None, :] <= A_f[None, :, :]).all(axis=2)
    else:
        conflict = np.zeros((len(correct), len(wrong)), dtype=bool)
    keep_t, keep_f = peel_conflicts(conflict)
    k = profiles.shape[1]
    upper = A_t[keep_t].reshape(-1, k).min(axis=0, initial=1).astype(np.int8)
    rel_wrong = A_f[keep_f].reshape(-1, k)
    lower = ((rel_wrong == 0).any(axis=0) & (upper == 1)).astype(np.int8)
    return DaBounds(upper, lower, correct, wrong, correct[~keep_t], wrong[~keep_f], rel_wrong)


def da_solve(
    question: int, profiles, X, cells=None, da_sample_size: int | None = 100, rng=None, current=None, coins=None
) -> np.ndarray:
    """Re-estimate one question vector from student profiles.

    Returns ``current`` unchanged when no training student answered the question.
    The result always tests at least one skill.
    """
    X = check_responses(X)
    cells = check_mask(cells, X.shape)
    rng = as_generator(rng)
    profiles = np.asarray(profiles, dtype=np.int8)
    k = profiles.shape[1]
    if not (cells[:, question] & ~np.isnan(X[:, question])).any():
        if current is None:
            raise ValueError(f"question {question} has no training answers and no current vector")
        return np.asarray(current, dtype=np.int8).copy()
    b = da_bounds(question, profiles, X, cells, da_sample_size, rng)
    if coins is None:
        coins = rng.integers(0, 2, size=k)
    row = np.where(b.upper == 0, 0, np.where(b.lower_indicator == 1, 1, coins)).astype(np.int8)
    if not row.any():
        if b.upper.any():
            # the allowed skill that explains the most wrong answers
            coverage = (b.reliable_wrong_profiles == 0).sum(axis=0)
            coverage = np.where(b.upper == 1, coverage, -1)
            row[int(np.argmax(coverage))] = 1
        else:
            row[int(rng.integers(k))] = 1
    return row


def da_solve_all(Q, profiles, X, cells=None, da_sample_size: int | None = 100, rng=None) -> np.ndarray:
    rng = as_generator(rng)
    Q = np.asarray(Q, dtype=np.int8)
    return np.stack(
        [da_solve(j, profiles, X, cells, da_sample_size, rng, current=Q[j]) for j in range(Q.shape[0])]
    )


def _fallback_accuracy(X, fit_mask):
    seen = fit_mask & ~np.isnan(X)
    right = (fit_mask & (X == 1)).sum(axis=0)
    n = seen.sum(axis=0)
    overall = right.sum() / max(n.sum(), 1)
    return np.where(n > 0, right / np.maximum(n, 1), overall)


def evaluate_candidate(Q, X, fit_mask, val_mask, goal: str = "SD", rng=None) -> float:
    """Validation MAE of the ``goal`` model fitted with ``Q`` on ``fit_mask``."""
    val_cells = np.argwhere(val_mask & ~np.isnan(X))
    if len(val_cells) == 0:
        raise ValueError("validation set is empty")
    truth = X[val_cells[:, 0], val_cells[:, 1]]
    if goal == "EM":
        from .dina_em import em_fit, em_predict_matrix

        state = em_fit(X, Q, fit_mask)
        probs = em_predict_matrix(state, X, fit_mask)
    else:
        batch = esve_batch(X, Q, fit_mask, rng)
        table = estimate_sd(batch, Q) if goal == "SD" else estimate_si(batch, Q)
        probs = predict_matrix(batch.profiles, Q, table)
        if not batch.has_data.all():
            probs[~batch.has_data] = _fallback_accuracy(X, fit_mask)[None, :]
    pred = probs[val_cells[:, 0], val_cells[:, 1]]
    return float(np.mean(np.abs(pred - truth)))


@dataclass
class CandidateQ:
    q: np.ndarray
    validation_mae: float = float("nan")
    age: int = 0
    origin: str = "QST"


@dataclass
class HbcaResult:
    best: QMatrix
    best_dim: int
    best_validation_mae: float
    report: list = field(default_factory=list)
    best_per_dim: dict = field(default_factory=dict)
    qst_per_dim: dict = field(default_factory=dict)


def _resolve_split(X, split, validation_ratio, seed):
    observed = ~np.isnan(X)
    if split is None:
        train = observed
        val = np.zeros_like(observed)
    elif isinstance(split, DataSplit):
        train = split.train_mask
        val = split.validation_mask
    else:
        train = check_mask(split, X.shape) & observed
        val = np.zeros_like(observed)
    if not val.any():
        inner = split_mask(train, validation_ratio, 0.0, derive_rng(seed, "hbca", "validation"))
        val = inner.test_mask
        train = inner.train_mask
    return train, val


def _median(values):
    return float(np.median(values))


def hbca_run(
    X, split=None, config: HbcaConfig | None = None, seed: int = 0, n_workers: int = 1, question_ids=None
) -> HbcaResult:
    """Label a Q-matrix without supervision.

    ``split`` supplies the training cells (a :class:`DataSplit`, a boolean mask,
    or ``None`` for every observed cell). Validation cells come from the split
    if it has any, otherwise ``config.validation_ratio`` of the training cells
    are held out once for the whole run.
    """
    config = config or HbcaConfig()
    X = check_responses(X)
    fit_mask, val_mask = _resolve_split(X, split, config.validation_ratio, seed)
    graph = build_covering_graph(X, fit_mask, config.eta)
    goal = config.selecting_goal
    log.info("HBCA: %d covering edges at eta=%.3f", len(graph.edges), config.eta)

    pool = ThreadPoolExecutor(max_workers=n_workers) if n_workers > 1 else None

    def pmap(fn, items):
        return list(pool.map(fn, items)) if pool else [fn(x) for x in items]

    def fresh(dim, tag, t, slot):
        q = qst_init(graph, dim, config.flip_prob, config.leaf_density, derive_rng(seed, "hbca", tag, dim, t, slot))
        mae = evaluate_candidate(q, X, fit_mask, val_mask, goal, derive_rng(seed, "hbca", "eval", tag, dim, t, slot))
        return CandidateQ(q, mae, 0, "QST")

    def calibrate(dim, t, slot, cand):
        rng = derive_rng(seed, "hbca", "calibrate", dim, t, slot)
        profiles = esve_batch(X, cand.q, fit_mask, rng).profiles
        q = da_solve_all(cand.q, profiles, X, fit_mask, config.da_sample_size, rng)
        mae = evaluate_candidate(q, X, fit_mask, val_mask, goal, rng)
        return CandidateQ(q, mae, cand.age + 1, "DA")

    result = HbcaResult(best=None, best_dim=-1, best_validation_mae=float("inf"))
    try:
        for dim in config.dims:
            pop = pmap(lambda slot: fresh(dim, "init", 0, slot), range(config.population_size))
            maes = [c.validation_mae for c in pop]
            top = int(np.argmin(maes))
            best_q, best_mae = pop[top].q.copy(), maes[top]
            result.qst_per_dim[dim] = (best_q.copy(), best_mae)
            result.report.append(_report_row(dim, 0, maes, best_mae, 0))
            for t in range(1, config.iterations + 1):
                pop = pmap(lambda sc: calibrate(dim, t, sc[0], sc[1]), list(enumerate(pop)))
                maes = [c.validation_mae for c in pop]
                top = int(np.argmin(maes))
                replaced = 0
                if maes[top] < best_mae:
                    best_q, best_mae = pop[top].q.copy(), maes[top]
                else:
                    # stable ranking, worst last; the round's best is never replaced
                    ranked = sorted(range(len(pop)), key=lambda s: (maes[s], s))
                    victims = [s for s in ranked[::-1] if s != top][: config.replace_count]
                    fresh_ones = pmap(lambda s: (s, fresh(dim, "replace", t, s)), victims)
                    for s, cand in fresh_ones:
                        pop[s] = cand
                    replaced = len(victims)
                    maes = [c.validation_mae for c in pop]
                    top = int(np.argmin(maes))
                    if maes[top] < best_mae:
                        best_q, best_mae = pop[top].q.copy(), maes[top]
                result.report.append(_report_row(dim, t, maes, best_mae, replaced))
            result.best_per_dim[dim] = (best_q, best_mae)
            if best_mae < result.best_validation_mae:
                result.best_validation_mae = best_mae
                result.best_dim = dim
    finally:
        if pool:
            pool.shutdown()

    best_q = result.best_per_dim[result.best_dim][0]
    qids = tuple(question_ids) if question_ids is not None else tuple(f"q{j}" for j in range(X.shape[1]))
    result.best = QMatrix(best_q, qids, tuple(f"skill-{k}" for k in range(result.best_dim)))
    return result


def _report_row(dim, t, maes, best_so_far, replaced):
    return {
        "dim_qv": int(dim),
        "iteration": int(t),
        "best_validation_mae": float(np.min(maes)),
        "median_validation_mae": _median(maes),
        "worst_validation_mae": float(np.max(maes)),
        "best_so_far": float(best_so_far),
        "replacements": int(replaced),
    }
