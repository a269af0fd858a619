"""Synthetic Gaussian-mixture generation and star-rated review ingestion.

Synthetic datasets are mixtures of axis-aligned Gaussian clusters, each
carrying a class label (binary or 1..5 stars) and a category tag.  Review
corpora are read from line-delimited JSON and turned into L2-normalised
tf-idf vectors with a vocabulary fitted on training documents only.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import sparse

from .core import BinaryDataset, EmptyDatasetError, StarDataset

_TOKEN_SPLIT = re.compile(r"[^0-9a-z]+")

MIN_REVIEW_CHARS = 200


@dataclass(frozen=True)
class ClusterSpec:
    """One axis-aligned Gaussian cluster of a synthetic mixture.

    Exactly one of ``label`` (binary) or ``stars`` (1..5) must be set; a
    mixture must use the same labelling scheme for every cluster.
    """

    mean: np.ndarray
    variance: np.ndarray
    weight: float
    category: str = "A"
    label: int | None = None
    stars: int | None = None

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).ravel()
        variance = np.asarray(self.variance, dtype=float).ravel()
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "variance", variance)
        if mean.shape != variance.shape:
            raise ValueError("mean and variance must have the same dimensionality")
        if not (variance > 0).all():
            raise ValueError("variances must be strictly positive")
        if self.weight < 0:
            raise ValueError("weight must be >= 0")
        if (self.label is None) == (self.stars is None):
            raise ValueError("exactly one of label/stars must be given")
        if self.label is not None and self.label not in (0, 1):
            raise ValueError("label must be 0 or 1")
        if self.stars is not None and self.stars not in (1, 2, 3, 4, 5):
            raise ValueError("stars must be in 1..5")

    @classmethod
    def from_dict(cls, d: dict) -> "ClusterSpec":
        return cls(
            mean=np.asarray(d["mean"], dtype=float),
            variance=np.asarray(d["variance"], dtype=float),
            weight=float(d["weight"]),
            category=d.get("category", "A"),
            label=d.get("label"),
            stars=d.get("stars"),
        )


def generate_mixture(
    specs: Sequence[ClusterSpec], n: int, seed: int
) -> StarDataset | BinaryDataset:
    """Draw ``n`` points from a weighted mixture of diagonal Gaussians.

    Each point picks a cluster with probability proportional to its weight,
    then samples independently per coordinate; label/category are copied
    from the chosen cluster.  Bit-reproducible for a fixed seed.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if not specs:
        raise ValueError("at least one cluster spec is required")
    star_mode = specs[0].stars is not None
    if any((s.stars is not None) != star_mode for s in specs):
        raise ValueError("clusters must all use labels or all use stars")
    weights = np.array([s.weight for s in specs], dtype=float)
    if abs(weights.sum() - 1.0) > 1e-9:
        raise ValueError(f"cluster weights must sum to 1, got {weights.sum()}")
    dim = specs[0].mean.shape[0]
    if any(s.mean.shape[0] != dim for s in specs):
        raise ValueError("all clusters must share one dimensionality")

    rng = np.random.default_rng(seed)
    assignment = rng.choice(len(specs), size=n, p=weights)
    noise = rng.standard_normal((n, dim))
    means = np.stack([s.mean for s in specs])[assignment]
    stds = np.sqrt(np.stack([s.variance for s in specs]))[assignment]
    x = means + stds * noise
    category = np.array([s.category for s in specs])[assignment]
    if star_mode:
        stars = np.array([s.stars for s in specs])[assignment]
        return StarDataset(x, stars, category)
    labels = np.array([s.label for s in specs])[assignment]
    return BinaryDataset(x, labels, category)


@dataclass(frozen=True)
class RawReview:
    """A star-rated product review before filtering/featurisation."""

    text: str
    stars: int
    category: str
    useful_votes: int

    def __post_init__(self):
        if not self.text:
            raise ValueError("review text must be non-empty")
        if self.stars not in (1, 2, 3, 4, 5):
            raise ValueError(f"stars must be in 1..5, got {self.stars}")
        if self.useful_votes < 0:
            raise ValueError("useful_votes must be >= 0")


def filter_reviews(reviews: Iterable[RawReview]) -> list[RawReview]:
    """Keep reviews of at least 200 characters that got at least one vote."""
    return [
        r
        for r in reviews
        if len(r.text) >= MIN_REVIEW_CHARS and r.useful_votes >= 1
    ]


def reviews_to_dataset(reviews: Sequence[RawReview]) -> StarDataset:
    """Pack reviews into a star dataset whose payload is the raw texts."""
    if not reviews:
        raise EmptyDatasetError("no reviews to pack")
    texts = np.array([r.text for r in reviews], dtype=object)
    return StarDataset(
        texts,
        np.array([r.stars for r in reviews]),
        np.array([r.category for r in reviews]),
    )


def load_reviews_jsonl(path: str | Path) -> list[RawReview]:
    """Read one JSON review per line: text, stars, category, useful_votes."""
    reviews = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                d = json.loads(line)
                reviews.append(
                    RawReview(
                        text=d["text"],
                        stars=int(d["stars"]),
                        category=d["category"],
                        useful_votes=int(d["useful_votes"]),
                    )
                )
            except (KeyError, ValueError, TypeError) as exc:
                raise ValueError(f"{path}:{line_no}: malformed review record: {exc}")
    return reviews


def tokenise(text: str) -> list[str]:
    """Lowercase and split on non-alphanumeric runs; no stemming, no stopwords."""
    return [t for t in _TOKEN_SPLIT.split(text.lower()) if t]


@dataclass(frozen=True)
class Vocabulary:
    """Term index fitted on training texts only.

    ``doc_freq[i]`` is the number of training documents containing term i;
    idf uses the smoothed form ln((1 + N) / (1 + df)) + 1.
    """

    index: dict[str, int]
    doc_freq: np.ndarray
    n_docs: int

    def __len__(self) -> int:
        return len(self.index)

    @property
    def idf(self) -> np.ndarray:
        return np.log((1.0 + self.n_docs) / (1.0 + self.doc_freq)) + 1.0


def fit_vocabulary(texts: Sequence[str], min_count: int = 3) -> Vocabulary:
    """Build the vocabulary of terms occurring at least ``min_count`` times.

    Counts are total occurrences across the corpus.  Terms are indexed in
    sorted order, so refitting on the same corpus is deterministic.
    """
    if len(texts) == 0:
        raise EmptyDatasetError("cannot fit a vocabulary on an empty corpus")
    totals: dict[str, int] = {}
    doc_sets = []
    for text in texts:
        tokens = tokenise(text)
        doc_sets.append(set(tokens))
        for t in tokens:
            totals[t] = totals.get(t, 0) + 1
    kept = sorted(t for t, c in totals.items() if c >= min_count)
    if not kept:
        raise EmptyDatasetError(
            f"no term occurs at least {min_count} times in the training corpus"
        )
    index = {t: i for i, t in enumerate(kept)}
    doc_freq = np.zeros(len(kept), dtype=int)
    for doc in doc_sets:
        for t in doc:
            i = index.get(t)
            if i is not None:
                doc_freq[i] += 1
    return Vocabulary(index=index, doc_freq=doc_freq, n_docs=len(texts))


def vectorise(texts: Sequence[str], vocab: Vocabulary) -> sparse.csr_matrix:
    """tf-idf vectors (raw counts x smoothed idf), each row L2-normalised.

    Out-of-vocabulary terms are ignored; a document with no in-vocabulary
    terms maps to the zero vector.
    """
    idf = vocab.idf
    data, col_indices, indptr = [], [], [0]
    for text in texts:
        counts: dict[int, int] = {}
        for t in tokenise(text):
            i = vocab.index.get(t)
            if i is not None:
                counts[i] = counts.get(i, 0) + 1
        cols = sorted(counts)
        row = np.array([counts[c] * idf[c] for c in cols], dtype=float)
        norm = np.linalg.norm(row)
        if norm > 0:
            row /= norm
        data.extend(row)
        col_indices.extend(cols)
        indptr.append(len(col_indices))
    return sparse.csr_matrix(
        (np.array(data), np.array(col_indices, dtype=int), np.array(indptr, dtype=int)),
        shape=(len(texts), len(vocab)),
    )


def load_cluster_specs(path: str | Path) -> list[ClusterSpec]:
    """Read a JSON list of cluster specs (mean, variance, weight, ...)."""
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, list) or not raw:
        raise ValueError("cluster spec file must hold a non-empty JSON list")
    return [ClusterSpec.from_dict(d) for d in raw]
