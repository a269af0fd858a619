"""Binary prevalence estimators behind a uniform fit/quantify interface.

Methods
-------
MLPE   constant baseline returning the training prevalence
CC     fraction of crisp positive predictions
ACC    CC corrected by cross-validated tpr/fpr (crisp rates)
PCC    mean posterior probability
PACC   PCC corrected by posterior-averaged tpr/fpr
SMM    matches the sample's mean posterior to the class-wise training means
DyS    minimises a histogram divergence between a two-class mixture of
       training posteriors and the test posteriors (Topsoe by default)
HDy    DyS with the Hellinger distance
SLD    expectation-maximisation rescaling of posteriors and prior

Every ``quantify`` is a pure function of (fitted state, sample features) and
returns a value in [0, 1].  Fitted quantifiers are immutable in practice and
safe to share across concurrent tasks.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .classifier import (
    ClassRates,
    SoftClassifier,
    oof_posteriors_kfold,
    predict_hard,
    predict_proba,
    rates_from_posteriors,
    train,
)
from .core import EmptyDatasetError

logger = logging.getLogger(__name__)

#: tpr/fpr gaps below this are treated as degenerate and skip the adjustment.
DEGENERATE_RATE_GAP = 1e-9

EM_TOL = 1e-6
EM_MAX_ITER = 1000

TERNARY_TOL = 1e-6
GRID_STEP = 1e-4

METHOD_NAMES = ("MLPE", "CC", "ACC", "PCC", "PACC", "SMM", "DyS", "HDy", "SLD")

#: The six methods compared throughout the benchmark tables.
BENCHMARK_METHODS = ("CC", "ACC", "PCC", "PACC", "DyS", "SLD")


# ---------------------------------------------------------------------------
# histograms and distances
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PosteriorHistogram:
    """Normalised histogram of posterior scores over a uniform [0, 1] grid.

    Bins are [e_i, e_{i+1}) with the last bin closed, so a score of exactly
    1.0 lands in the top bin.
    """

    masses: np.ndarray

    def __post_init__(self):
        masses = np.asarray(self.masses, dtype=float)
        object.__setattr__(self, "masses", masses)
        if len(masses) < 2:
            raise ValueError("a histogram needs at least 2 bins")
        if (masses < 0).any() or abs(masses.sum() - 1.0) > 1e-12:
            raise ValueError("histogram masses must be >= 0 and sum to 1")

    @property
    def bins(self) -> int:
        return len(self.masses)

    @classmethod
    def from_scores(cls, scores: np.ndarray, bins: int) -> "PosteriorHistogram":
        scores = np.asarray(scores, dtype=float)
        if len(scores) == 0:
            raise EmptyDatasetError("cannot build a histogram from zero scores")
        counts, _ = np.histogram(scores, bins=bins, range=(0.0, 1.0))
        return cls(counts / counts.sum())


def _masses(h) -> np.ndarray:
    return h.masses if isinstance(h, PosteriorHistogram) else np.asarray(h, dtype=float)


def _check_pair(a: np.ndarray, b: np.ndarray):
    if a.shape != b.shape:
        raise ValueError(f"histograms have mismatched bins: {a.shape} vs {b.shape}")


def _topsoe_rows(rows: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Topsoe distance of each row against b, with 0*log(.) := 0."""
    b = np.broadcast_to(b, rows.shape)
    s = rows + b
    safe_s = np.where(s > 0, s, 1.0)

    def half(p):
        with np.errstate(divide="ignore", invalid="ignore"):
            vals = p * np.log(2.0 * p / safe_s)
        return np.where(p > 0, vals, 0.0)

    return (half(rows) + half(b)).sum(axis=-1)


def topsoe_distance(h1, h2) -> float:
    """Symmetric Kullback-Leibler-to-the-midpoint divergence (in nats)."""
    a, b = _masses(h1), _masses(h2)
    _check_pair(a, b)
    return float(_topsoe_rows(a[None, :], b)[0])


def _hellinger_rows(rows: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = np.sqrt(rows) - np.sqrt(b)
    return np.sqrt((diff * diff).sum(axis=-1)) / np.sqrt(2.0)


def hellinger_distance(h1, h2) -> float:
    """Hellinger distance; 0 for identical histograms, 1 for disjoint ones."""
    a, b = _masses(h1), _masses(h2)
    _check_pair(a, b)
    return float(_hellinger_rows(a[None, :], b)[0])


_DISTANCES: dict[str, tuple[Callable, Callable]] = {
    "topsoe": (topsoe_distance, _topsoe_rows),
    "hellinger": (hellinger_distance, _hellinger_rows),
}


def mixture_fit_alpha(h_pos, h_neg, h_test, distance: str = "topsoe") -> float:
    """The mixture weight alpha minimising dist(alpha*H+ + (1-alpha)*H-, H_test).

    Ternary search narrows [0, 1] down to 1e-6; a 1e-4-step grid scan guards
    against non-unimodal objectives and the better of the two answers wins.
    """
    if distance not in _DISTANCES:
        raise ValueError(f"unknown distance {distance!r}; use one of {sorted(_DISTANCES)}")
    pos, neg, test = _masses(h_pos), _masses(h_neg), _masses(h_test)
    _check_pair(pos, neg)
    _check_pair(pos, test)
    scalar, rows = _DISTANCES[distance]

    def objective(alpha: float) -> float:
        return scalar(alpha * pos + (1.0 - alpha) * neg, test)

    lo, hi = 0.0, 1.0
    while hi - lo > TERNARY_TOL:
        m1 = lo + (hi - lo) / 3.0
        m2 = hi - (hi - lo) / 3.0
        if objective(m1) <= objective(m2):
            hi = m2
        else:
            lo = m1
    alpha_ternary = (lo + hi) / 2.0

    alphas = np.arange(0.0, 1.0 + GRID_STEP / 2, GRID_STEP)
    mixtures = alphas[:, None] * pos[None, :] + (1.0 - alphas)[:, None] * neg[None, :]
    grid_values = rows(mixtures, test)
    alpha_grid = float(alphas[int(np.argmin(grid_values))])

    if objective(alpha_ternary) <= float(grid_values.min()):
        return float(alpha_ternary)
    return alpha_grid


# ---------------------------------------------------------------------------
# prevalence formulas
# ---------------------------------------------------------------------------


def classify_and_count(hard_predictions: np.ndarray) -> float:
    preds = np.asarray(hard_predictions)
    if len(preds) == 0:
        raise EmptyDatasetError("cannot quantify an empty sample")
    return float(preds.sum() / len(preds))


def probabilistic_classify_and_count(posteriors: np.ndarray) -> float:
    posteriors = np.asarray(posteriors, dtype=float)
    if len(posteriors) == 0:
        raise EmptyDatasetError("cannot quantify an empty sample")
    return float(posteriors.mean())


def adjust_prevalence(base_estimate: float, rates: ClassRates) -> float:
    """(base - fpr) / (tpr - fpr), clipped to [0, 1].

    A near-zero denominator means the rates carry no usable signal; the
    unadjusted estimate is returned instead.
    """
    gap = rates.tpr - rates.fpr
    if abs(gap) < DEGENERATE_RATE_GAP:
        return min(max(base_estimate, 0.0), 1.0)
    return min(max((base_estimate - rates.fpr) / gap, 0.0), 1.0)


def mean_matching_prevalence(
    test_mean: float, positive_mean: float, negative_mean: float
) -> float:
    """Where the sample's mean posterior falls between the class-wise means.

    Solves test_mean = alpha * positive_mean + (1 - alpha) * negative_mean
    for alpha, clipped to [0, 1]; coincident class means carry no signal and
    return the test mean itself.
    """
    spread = positive_mean - negative_mean
    if abs(spread) < DEGENERATE_RATE_GAP:
        return min(max(test_mean, 0.0), 1.0)
    return min(max((test_mean - negative_mean) / spread, 0.0), 1.0)


def expectation_maximisation_prevalence(
    posteriors: np.ndarray,
    train_prevalence: float,
    tol: float = EM_TOL,
    max_iter: int = EM_MAX_ITER,
) -> tuple[float, bool, int]:
    """Jointly rescale posteriors and re-estimate the prior to a fixed point.

    Starting from the training prevalence, each step rescales every posterior
    by the ratio of current to training priors and replaces the prior with
    the mean rescaled posterior, until that mean moves by less than ``tol``
    (so the returned value is within tol of the mean of its own recalibrated
    posteriors) or ``max_iter`` steps elapse.

    Returns (prevalence, converged, iterations).
    """
    if not 0.0 < train_prevalence < 1.0:
        raise ValueError(
            f"training prevalence must lie strictly in (0, 1), got {train_prevalence}"
        )
    s = np.asarray(posteriors, dtype=float)
    if len(s) == 0:
        raise EmptyDatasetError("cannot quantify an empty sample")
    p = train_prevalence
    for iteration in range(max_iter):
        if p <= 0.0 or p >= 1.0:
            return float(p), True, iteration  # absorbing endpoint
        num = (p / train_prevalence) * s
        den = num + ((1.0 - p) / (1.0 - train_prevalence)) * (1.0 - s)
        m = float((num / den).mean())
        if abs(m - p) < tol:
            return float(p), True, iteration
        p = m
    return float(p), False, max_iter


# ---------------------------------------------------------------------------
# fitted evidence shared by the aggregative methods
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainedEvidence:
    """A trained classifier plus the cross-validated evidence methods draw on.

    ``oof_posteriors`` holds one out-of-fold posterior per training item and
    is only materialised when some method needs it.
    """

    clf: SoftClassifier
    labels: np.ndarray
    train_prevalence: float
    oof_posteriors: np.ndarray | None


def fit_evidence(
    x,
    labels: np.ndarray,
    C: float = 1.0,
    class_weight: str | None = None,
    folds: int = 10,
    seed: int = 0,
    need_oof: bool = True,
) -> TrainedEvidence:
    """Train the classifier (and, if needed, its k-fold out-of-fold posteriors)."""
    labels = np.asarray(labels, dtype=int)
    clf = train(x, labels, C=C, class_weight=class_weight)
    oof = (
        oof_posteriors_kfold(x, labels, folds, C, class_weight, seed)
        if need_oof
        else None
    )
    return TrainedEvidence(
        clf=clf,
        labels=labels,
        train_prevalence=float(labels.sum() / len(labels)),
        oof_posteriors=oof,
    )


# ---------------------------------------------------------------------------
# quantifiers
# ---------------------------------------------------------------------------


class Quantifier:
    """Base interface: fit on labelled data, then quantify feature batches."""

    method: str = "?"
    needs_oof: bool = False

    def __init__(
        self,
        C: float = 1.0,
        class_weight: str | None = None,
        folds: int = 10,
        seed: int = 0,
    ):
        self.C = C
        self.class_weight = class_weight
        self.folds = folds
        self.seed = seed
        self._fitted = False

    def fit(self, x, labels) -> "Quantifier":
        evidence = fit_evidence(
            x,
            labels,
            C=self.C,
            class_weight=self.class_weight,
            folds=self.folds,
            seed=self.seed,
            need_oof=self.needs_oof,
        )
        return self.fit_evidence(evidence)

    def fit_evidence(self, evidence: TrainedEvidence) -> "Quantifier":
        """Fit from precomputed evidence (lets the harness share one stack)."""
        if self.needs_oof and evidence.oof_posteriors is None:
            raise ValueError(f"{self.method} needs out-of-fold posteriors")
        self._prepare(evidence)
        self._fitted = True
        return self

    def _prepare(self, evidence: TrainedEvidence):
        raise NotImplementedError

    def quantify(self, x) -> float:
        raise NotImplementedError

    def _require_fitted(self):
        if not self._fitted:
            raise RuntimeError(f"{self.method} quantifier is not fitted")

    @staticmethod
    def _check_sample(x):
        if x.shape[0] == 0:
            raise EmptyDatasetError("cannot quantify an empty sample")


class MLPE(Quantifier):
    """Returns the training prevalence for every sample, ignoring features."""

    method = "MLPE"

    def fit(self, x, labels) -> "MLPE":
        labels = np.asarray(labels)
        self.prevalence_ = float(labels.sum() / len(labels))
        self._fitted = True
        return self

    def _prepare(self, evidence: TrainedEvidence):
        self.prevalence_ = evidence.train_prevalence

    def quantify(self, x) -> float:
        self._require_fitted()
        self._check_sample(x)
        return self.prevalence_


class CC(Quantifier):
    """Classify and count: the fraction of crisp positive predictions."""

    method = "CC"

    def _prepare(self, evidence: TrainedEvidence):
        self.clf_ = evidence.clf

    def quantify(self, x) -> float:
        self._require_fitted()
        self._check_sample(x)
        return classify_and_count(predict_hard(self.clf_, x))


class ACC(Quantifier):
    """CC adjusted by k-fold estimates of the crisp tpr and fpr."""

    method = "ACC"
    needs_oof = True

    def _prepare(self, evidence: TrainedEvidence):
        self.clf_ = evidence.clf
        self.rates_ = rates_from_posteriors(
            evidence.oof_posteriors, evidence.labels, "hard"
        )

    def quantify(self, x) -> float:
        self._require_fitted()
        self._check_sample(x)
        cc = classify_and_count(predict_hard(self.clf_, x))
        return adjust_prevalence(cc, self.rates_)


class PCC(Quantifier):
    """Probabilistic classify and count: the mean posterior."""

    method = "PCC"

    def _prepare(self, evidence: TrainedEvidence):
        self.clf_ = evidence.clf

    def quantify(self, x) -> float:
        self._require_fitted()
        self._check_sample(x)
        return probabilistic_classify_and_count(predict_proba(self.clf_, x))


class PACC(Quantifier):
    """PCC adjusted by posterior-averaged (soft) tpr and fpr."""

    method = "PACC"
    needs_oof = True

    def _prepare(self, evidence: TrainedEvidence):
        self.clf_ = evidence.clf
        self.rates_ = rates_from_posteriors(
            evidence.oof_posteriors, evidence.labels, "soft"
        )

    def quantify(self, x) -> float:
        self._require_fitted()
        self._check_sample(x)
        pcc = probabilistic_classify_and_count(predict_proba(self.clf_, x))
        return adjust_prevalence(pcc, self.rates_)


class SMM(Quantifier):
    """Places the sample's mean posterior between the class-wise training means."""

    method = "SMM"
    needs_oof = True

    def _prepare(self, evidence: TrainedEvidence):
        self.clf_ = evidence.clf
        oof, labels = evidence.oof_posteriors, evidence.labels
        self.positive_mean_ = float(oof[labels == 1].mean())
        self.negative_mean_ = float(oof[labels == 0].mean())

    def quantify(self, x) -> float:
        self._require_fitted()
        self._check_sample(x)
        test_mean = float(predict_proba(self.clf_, x).mean())
        return mean_matching_prevalence(
            test_mean, self.positive_mean_, self.negative_mean_
        )


class DyS(Quantifier):
    """Histogram-mixture matching over posterior scores."""

    method = "DyS"

    def __init__(self, bins: int = 10, distance: str = "topsoe", **kwargs):
        super().__init__(**kwargs)
        if bins < 2:
            raise ValueError(f"bins must be >= 2, got {bins}")
        self.bins = bins
        self.distance = distance

    needs_oof = True

    def _prepare(self, evidence: TrainedEvidence):
        self.clf_ = evidence.clf
        oof, labels = evidence.oof_posteriors, evidence.labels
        self.hist_pos_ = PosteriorHistogram.from_scores(oof[labels == 1], self.bins)
        self.hist_neg_ = PosteriorHistogram.from_scores(oof[labels == 0], self.bins)

    def quantify(self, x) -> float:
        self._require_fitted()
        self._check_sample(x)
        h_test = PosteriorHistogram.from_scores(predict_proba(self.clf_, x), self.bins)
        return mixture_fit_alpha(self.hist_pos_, self.hist_neg_, h_test, self.distance)


class SLD(Quantifier):
    """Expectation-maximisation rescaling of posteriors and prior."""

    method = "SLD"

    def _prepare(self, evidence: TrainedEvidence):
        if not 0.0 < evidence.train_prevalence < 1.0:
            raise ValueError(
                "training prevalence must lie strictly in (0, 1) to rescale posteriors"
            )
        self.clf_ = evidence.clf
        self.train_prevalence_ = evidence.train_prevalence
        self.cap_hits_ = 0

    def quantify(self, x) -> float:
        self._require_fitted()
        self._check_sample(x)
        posteriors = predict_proba(self.clf_, x)
        p, converged, iterations = expectation_maximisation_prevalence(
            posteriors, self.train_prevalence_
        )
        if not converged:
            self.cap_hits_ += 1
            # one visible warning per fitted instance, the rest at debug level
            log = logger.warning if self.cap_hits_ == 1 else logger.debug
            log(
                "EM hit the %d-iteration cap (train prevalence %.3f, %d cap hits)",
                iterations,
                self.train_prevalence_,
                self.cap_hits_,
            )
        return p


def quantifier_factory(
    method: str,
    C: float = 1.0,
    class_weight: str | None = None,
    folds: int = 10,
    bins: int = 10,
    distance: str = "topsoe",
    seed: int = 0,
) -> Quantifier:
    """Build an unfitted quantifier by method name (case-insensitive)."""
    common = dict(C=C, class_weight=class_weight, folds=folds, seed=seed)
    key = method.upper()
    if key == "MLPE":
        return MLPE(**common)
    if key == "CC":
        return CC(**common)
    if key == "ACC":
        return ACC(**common)
    if key == "PCC":
        return PCC(**common)
    if key == "PACC":
        return PACC(**common)
    if key == "SMM":
        return SMM(**common)
    if key == "DYS":
        return DyS(bins=bins, distance=distance, **common)
    if key == "HDY":
        q = DyS(bins=bins, distance="hellinger", **common)
        q.method = "HDy"
        return q
    if key == "SLD":
        return SLD(**common)
    raise ValueError(f"unknown quantification method {method!r}; known: {METHOD_NAMES}")
