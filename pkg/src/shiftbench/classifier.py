"""Soft linear classifier: weighted L2-regularised logistic regression.

The training objective is

    J(w, b) = ||w||^2 / (2 C)  +  (1/n) sum_i omega_i * logloss_i

with per-item weights omega_i = 1 (class_weight None) or
omega_i = n / (2 * n_class(i)) ("balanced").  The data term is a mean, so
duplicating the dataset leaves the optimum unchanged.  The bias is not
regularised.  Optimisation uses L-BFGS with the analytic gradient below,
run to a gradient tolerance of 1e-6 (or a 10,000-iteration cap).
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy import optimize

from .core import Pool, Sample, round_half_up, sample_at_prevalence, split_stratified
from .seeds import derive_seed

logger = logging.getLogger(__name__)

GRAD_TOL = 1e-6
MAX_ITER = 10_000

#: Hyperparameter grid searched by default: five regularisation strengths
#: crossed with balanced/unbalanced class weighting.
DEFAULT_GRID = tuple(
    {"C": c, "class_weight": cw}
    for c in (0.1, 1.0, 10.0, 100.0, 1000.0)
    for cw in ("balanced", None)
)

_PROBA_EPS = 1e-12


class ClassRates(NamedTuple):
    """True/false positive rates of a classifier (crisp or posterior-averaged)."""

    tpr: float
    fpr: float


@dataclass(frozen=True)
class SoftClassifier:
    """A fitted linear scorer returning posteriors in (0, 1)."""

    weights: np.ndarray
    bias: float
    C: float
    class_weight: str | None

    @property
    def dim(self) -> int:
        return len(self.weights)


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def item_weights(labels: np.ndarray, class_weight: str | None) -> np.ndarray:
    """Per-item loss weights: all ones, or n/(2*n_class) under "balanced"."""
    labels = np.asarray(labels)
    if class_weight is None:
        return np.ones(len(labels))
    if class_weight != "balanced":
        raise ValueError(f"class_weight must be None or 'balanced', got {class_weight!r}")
    n = len(labels)
    n_pos = int(labels.sum())
    n_neg = n - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("balanced weighting needs both classes present")
    w = np.where(labels == 1, n / (2.0 * n_pos), n / (2.0 * n_neg))
    return w


def loss_and_grad(
    params: np.ndarray, x, labels: np.ndarray, C: float, omega: np.ndarray
) -> tuple[float, np.ndarray]:
    """Objective value and analytic gradient at params = (w..., b)."""
    w, b = params[:-1], params[-1]
    z = x @ w + b
    # log-loss via softplus: log(1+e^z) - y*z, stable for large |z|
    losses = np.logaddexp(0.0, z) - labels * z
    n = len(labels)
    loss = float(w @ w) / (2.0 * C) + float(omega @ losses) / n
    gz = omega * (sigmoid(z) - labels) / n
    grad_w = x.T @ gz + w / C
    grad = np.concatenate([np.asarray(grad_w).ravel(), [gz.sum()]])
    return loss, grad


def train(x, labels: np.ndarray, C: float = 1.0, class_weight: str | None = None) -> SoftClassifier:
    """Fit the regularised logistic model; raises if only one class is present."""
    labels = np.asarray(labels, dtype=float)
    if C <= 0:
        raise ValueError(f"C must be > 0, got {C}")
    classes = np.unique(labels)
    if len(classes) < 2:
        raise ValueError("training data must contain both classes")
    omega = item_weights(labels.astype(int), class_weight)
    dim = x.shape[1]
    result = optimize.minimize(
        loss_and_grad,
        x0=np.zeros(dim + 1),
        args=(x, labels, C, omega),
        method="L-BFGS-B",
        jac=True,
        options={"maxiter": MAX_ITER, "gtol": GRAD_TOL, "ftol": 1e-14},
    )
    params = result.x
    return SoftClassifier(
        weights=params[:-1], bias=float(params[-1]), C=C, class_weight=class_weight
    )


def decision_scores(clf: SoftClassifier, x) -> np.ndarray:
    if x.shape[1] != clf.dim:
        raise ValueError(f"expected {clf.dim} features, got {x.shape[1]}")
    return np.asarray(x @ clf.weights).ravel() + clf.bias


def predict_proba(clf: SoftClassifier, x) -> np.ndarray:
    """Posterior of the positive class, clipped into the open interval (0, 1)."""
    p = sigmoid(decision_scores(clf, x))
    return np.clip(p, _PROBA_EPS, 1.0 - _PROBA_EPS)


def predict_hard(clf: SoftClassifier, x) -> np.ndarray:
    """Crisp decisions: 1 iff the posterior is >= 0.5 (ties go positive)."""
    return (predict_proba(clf, x) >= 0.5).astype(int)


def stratified_fold_ids(labels: np.ndarray, k: int, seed: int) -> np.ndarray:
    """Assign each item a fold id in 0..k-1, stratified by label."""
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    fold = np.empty(len(labels), dtype=int)
    for value in np.unique(labels):
        members = np.flatnonzero(labels == value)
        if len(members) < k:
            raise ValueError(
                f"class {value!r} has {len(members)} member(s); need >= k={k}"
            )
        shuffled = rng.permutation(members)
        fold[shuffled] = np.arange(len(members)) % k
    return fold


def oof_posteriors_kfold(
    x, labels: np.ndarray, k: int, C: float, class_weight: str | None, seed: int
) -> np.ndarray:
    """Out-of-fold posterior for every training item, via stratified k-fold."""
    labels = np.asarray(labels)
    fold = stratified_fold_ids(labels, k, seed)
    oof = np.empty(len(labels))
    for f in range(k):
        held = fold == f
        clf = train(x[~held], labels[~held], C=C, class_weight=class_weight)
        oof[held] = predict_proba(clf, x[held])
    return oof


def rates_from_posteriors(
    posteriors: np.ndarray, labels: np.ndarray, mode: str
) -> ClassRates:
    """tpr/fpr from per-item posteriors: crisp counts or posterior means."""
    labels = np.asarray(labels)
    pos, neg = posteriors[labels == 1], posteriors[labels == 0]
    if len(pos) == 0 or len(neg) == 0:
        raise ValueError("both classes are needed to estimate rates")
    if mode == "hard":
        return ClassRates(float((pos >= 0.5).mean()), float((neg >= 0.5).mean()))
    if mode == "soft":
        return ClassRates(float(pos.mean()), float(neg.mean()))
    raise ValueError(f"mode must be 'hard' or 'soft', got {mode!r}")


def estimate_rates_kfold(
    x,
    labels: np.ndarray,
    k: int,
    C: float,
    class_weight: str | None,
    mode: str,
    seed: int,
) -> ClassRates:
    """k-fold cross-validated tpr/fpr on the training set."""
    oof = oof_posteriors_kfold(x, labels, k, C, class_weight, seed)
    return rates_from_posteriors(oof, labels, mode)


def _feasible_sample_size(pool: Pool, prevalence: float, requested: int) -> int:
    """Largest size <= requested the pool can serve at this prevalence."""
    if prevalence <= 0:
        return min(requested, pool.n_negative)
    if prevalence >= 1:
        return min(requested, pool.n_positive)
    n = min(
        requested,
        int(pool.n_positive / prevalence),
        int(pool.n_negative / (1.0 - prevalence)),
    )
    while n >= 1:
        n_pos = round_half_up(prevalence * n)
        if n_pos <= pool.n_positive and n - n_pos <= pool.n_negative:
            return n
        n -= 1
    return 0


def build_validation_samples(
    pool: Pool,
    seed: int,
    prevalence_grid: Sequence[float] = tuple(i / 10 for i in range(11)),
    samples_per_prevalence: int = 10,
    sample_size: int = 500,
) -> list[Sample]:
    """Prevalence-swept validation samples for quantifier model selection.

    Prevalences the pool cannot serve at any size are skipped with a warning;
    if every prevalence is skipped this raises.
    """
    samples = []
    for p_idx, p in enumerate(prevalence_grid):
        size = _feasible_sample_size(pool, p, sample_size)
        if size < 1:
            warnings.warn(
                f"validation pool cannot form a sample at prevalence {p}; skipping"
            )
            continue
        for j in range(samples_per_prevalence):
            samples.append(
                sample_at_prevalence(pool, p, size, derive_seed(seed, "val", p_idx, j))
            )
    if not samples:
        raise ValueError("validation pool too small for every prevalence in the grid")
    return samples


def grid_search(
    train_pool: Pool,
    make_quantifier: Callable[[dict], "object"],
    grid: Sequence[dict] = DEFAULT_GRID,
    seed: int = 0,
    validation_fraction: float = 0.4,
    samples_per_prevalence: int = 10,
    sample_size: int = 500,
) -> dict:
    """Pick the grid point whose quantifier attains the lowest validation MAE.

    A stratified ``validation_fraction`` of the pool is held out; each grid
    point is fitted on the remainder and scored by mean absolute error over
    prevalence-swept samples drawn from the held-out part.  The caller is
    expected to refit the winning configuration on the full pool.  Ties keep
    the earliest grid entry, so selection is deterministic given the seed.
    """
    if not grid:
        raise ValueError("hyperparameter grid must be non-empty")
    fit_pool, val_pool = split_stratified(
        train_pool.dataset, 1.0 - validation_fraction, derive_seed(seed, "split")
    )
    samples = build_validation_samples(
        val_pool,
        seed,
        samples_per_prevalence=samples_per_prevalence,
        sample_size=sample_size,
    )
    best_params, best_mae = None, np.inf
    for params in grid:
        q = make_quantifier(dict(params))
        q.fit(fit_pool.dataset.x, fit_pool.dataset.labels)
        errors = [abs(q.quantify(s.x) - s.true_prevalence) for s in samples]
        mae = float(np.mean(errors))
        logger.debug("grid point %s -> validation MAE %.5f", params, mae)
        if mae < best_mae:
            best_params, best_mae = dict(params), mae
    return best_params
