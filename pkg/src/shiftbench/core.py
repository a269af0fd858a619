"""Core data types: star-rated and binary datasets, pools, and controlled sampling.

Datasets are column-oriented: a payload ``x`` (dense matrix, sparse matrix, or
an object array of raw texts), plus parallel label/category arrays.  All
sampling operations are pure functions of (pool, seed) and never mutate their
inputs, so pools can be shared freely across concurrent tasks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

CATEGORIES = ("A", "B")


class EmptyDatasetError(ValueError):
    """Raised when an operation would produce or consume an empty dataset."""


class StratificationError(ValueError):
    """Raised when a stratified split is impossible (a class is too small)."""


class PoolExhaustionError(ValueError):
    """Raised when a pool cannot supply the requested number of items.

    ``label_name`` identifies the class that ran out ("positive"/"negative",
    or a star value for star-labelled pools).
    """

    def __init__(self, label_name: str, requested: int, available: int):
        self.label_name = label_name
        self.requested = requested
        self.available = available
        super().__init__(
            f"pool exhausted: need {requested} {label_name} items, "
            f"only {available} available"
        )


def round_half_up(value: float) -> int:
    """Round to the nearest integer, with .5 going up.

    A 1e-9 guard absorbs float noise in products of grid fractions
    (e.g. 0.3 * 5000) whose exact value is integral or half-integral.
    """
    return int(math.floor(value + 0.5 + 1e-9))


def _as_payload(x: Any) -> Any:
    if isinstance(x, np.ndarray):
        return x
    if hasattr(x, "tocsr"):  # scipy sparse matrix
        return x.tocsr()
    arr = np.asarray(x)
    if arr.dtype.kind in ("U", "S", "O"):
        return arr.astype(object)
    return arr.astype(float)


def _payload_len(x: Any) -> int:
    return x.shape[0] if hasattr(x, "shape") else len(x)


def _payload_take(x: Any, indices: np.ndarray) -> Any:
    return x[indices]


def is_text_payload(x: Any) -> bool:
    """True when the payload holds raw documents rather than feature vectors."""
    return isinstance(x, np.ndarray) and x.dtype == object


@dataclass(frozen=True)
class StarDatapoint:
    """One item of a star-rated dataset (1..5 stars, category A or B)."""

    features: np.ndarray
    stars: int
    category: str

    def __post_init__(self):
        if self.stars not in (1, 2, 3, 4, 5):
            raise ValueError(f"stars must be in 1..5, got {self.stars}")
        if self.category not in CATEGORIES:
            raise ValueError(f"category must be one of {CATEGORIES}")


@dataclass(frozen=True)
class BinaryDatapoint:
    """One labelled item; label 1 is the positive class."""

    features: np.ndarray
    label: int

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label}")


@dataclass(frozen=True)
class StarDataset:
    """Star-labelled items: payload + stars in 1..5 + category tags."""

    x: Any
    stars: np.ndarray
    category: np.ndarray

    def __post_init__(self):
        stars = np.asarray(self.stars, dtype=int)
        category = np.asarray(self.category)
        object.__setattr__(self, "x", _as_payload(self.x))
        object.__setattr__(self, "stars", stars)
        object.__setattr__(self, "category", category)
        n = _payload_len(self.x)
        if len(stars) != n or len(category) != n:
            raise ValueError("x, stars and category must have equal length")
        if n and (stars.min() < 1 or stars.max() > 5):
            raise ValueError("stars must lie in 1..5")
        if n and not np.isin(category, CATEGORIES).all():
            raise ValueError(f"categories must be in {CATEGORIES}")

    def __len__(self) -> int:
        return _payload_len(self.x)

    @classmethod
    def from_datapoints(cls, points: Sequence[StarDatapoint]) -> "StarDataset":
        if not points:
            raise EmptyDatasetError("cannot build a dataset from zero datapoints")
        return cls(
            x=np.stack([np.asarray(p.features, dtype=float) for p in points]),
            stars=np.array([p.stars for p in points]),
            category=np.array([p.category for p in points]),
        )

    def take(self, indices: np.ndarray) -> "StarDataset":
        indices = np.asarray(indices)
        return StarDataset(
            _payload_take(self.x, indices), self.stars[indices], self.category[indices]
        )


@dataclass(frozen=True)
class BinaryDataset:
    """Binary-labelled items; label 1 is the positive class."""

    x: Any
    labels: np.ndarray
    category: np.ndarray | None = None

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=int)
        object.__setattr__(self, "x", _as_payload(self.x))
        object.__setattr__(self, "labels", labels)
        n = _payload_len(self.x)
        if len(labels) != n:
            raise ValueError("x and labels must have equal length")
        if n and not np.isin(labels, (0, 1)).all():
            raise ValueError("labels must be 0 or 1")
        if self.category is not None:
            category = np.asarray(self.category)
            object.__setattr__(self, "category", category)
            if len(category) != n:
                raise ValueError("category must match dataset length")

    def __len__(self) -> int:
        return _payload_len(self.x)

    @property
    def prevalence(self) -> float:
        return float(self.labels.sum() / len(self))

    @classmethod
    def from_datapoints(cls, points: Sequence[BinaryDatapoint]) -> "BinaryDataset":
        if not points:
            raise EmptyDatasetError("cannot build a dataset from zero datapoints")
        return cls(
            x=np.stack([np.asarray(p.features, dtype=float) for p in points]),
            labels=np.array([p.label for p in points]),
        )

    def take(self, indices: np.ndarray) -> "BinaryDataset":
        indices = np.asarray(indices)
        category = None if self.category is None else self.category[indices]
        return BinaryDataset(_payload_take(self.x, indices), self.labels[indices], category)


@dataclass(frozen=True)
class Pool:
    """A labelled reservoir from which samples are drawn without replacement.

    ``positive_index`` / ``negative_index`` partition the datapoints by label.
    Immutable after construction; drawing is pure given (pool, seed).
    """

    dataset: BinaryDataset
    positive_index: np.ndarray = field(init=False)
    negative_index: np.ndarray = field(init=False)

    def __post_init__(self):
        labels = self.dataset.labels
        object.__setattr__(self, "positive_index", np.flatnonzero(labels == 1))
        object.__setattr__(self, "negative_index", np.flatnonzero(labels == 0))

    def __len__(self) -> int:
        return len(self.dataset)

    @property
    def prevalence(self) -> float:
        return self.dataset.prevalence

    @property
    def n_positive(self) -> int:
        return len(self.positive_index)

    @property
    def n_negative(self) -> int:
        return len(self.negative_index)


@dataclass(frozen=True)
class Sample:
    """A drawn sample; labels are kept for scoring but hidden from quantifiers.

    ``true_prevalence`` is exactly (count of label-1) / size.
    """

    x: Any
    labels: np.ndarray
    true_prevalence: float = field(init=False)

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=int)
        object.__setattr__(self, "labels", labels)
        if len(labels) < 1:
            raise EmptyDatasetError("a sample must contain at least one datapoint")
        object.__setattr__(self, "true_prevalence", float(labels.sum() / len(labels)))

    def __len__(self) -> int:
        return len(self.labels)


def binarise_dataset(data: StarDataset, cut_point: float) -> BinaryDataset:
    """Binarise a star-labelled dataset at ``cut_point``.

    Items with stars above the cut point become positive (label 1), items
    below become negative, and items exactly at the cut point are dropped.
    Integer cut points therefore shrink the dataset; half-integer cut points
    (e.g. 2.5) keep every item.
    """
    if not 1 < cut_point < 5:
        raise ValueError(f"cut_point must lie strictly between 1 and 5, got {cut_point}")
    if len(data) == 0:
        raise EmptyDatasetError("cannot binarise an empty dataset")
    stars = data.stars.astype(float)
    keep = stars != cut_point
    if not keep.any():
        raise EmptyDatasetError(
            f"binarising at cut_point={cut_point} removed every datapoint"
        )
    indices = np.flatnonzero(keep)
    labels = (stars[indices] > cut_point).astype(int)
    return BinaryDataset(
        _payload_take(data.x, indices), labels, data.category[indices]
    )


def stratified_split_indices(
    labels: np.ndarray, fraction: float, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """Split indices into two disjoint, jointly exhaustive groups.

    Each distinct label contributes ``round_half_up(fraction * count)`` items
    to the first group, so both groups preserve the label mix to within one
    item per class.  Deterministic given ``seed``.
    """
    if not 0 < fraction < 1:
        raise ValueError(f"fraction must lie strictly in (0, 1), got {fraction}")
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    first_parts, second_parts = [], []
    for value in np.unique(labels):
        members = np.flatnonzero(labels == value)
        if len(members) < 2:
            raise StratificationError(
                f"class {value!r} has {len(members)} member(s); "
                "need at least 2 to stratify"
            )
        shuffled = rng.permutation(members)
        k = round_half_up(fraction * len(members))
        k = min(max(k, 1), len(members) - 1)  # both sides keep >= 1 of each class
        first_parts.append(shuffled[:k])
        second_parts.append(shuffled[k:])
    return np.sort(np.concatenate(first_parts)), np.sort(np.concatenate(second_parts))


def split_stratified(
    data: BinaryDataset, fraction: float, seed: int
) -> tuple[Pool, Pool]:
    """Split a binary dataset into two label-stratified pools."""
    first, second = stratified_split_indices(data.labels, fraction, seed)
    return Pool(data.take(first)), Pool(data.take(second))


def sample_at_prevalence(pool: Pool, prevalence: float, size: int, seed: int) -> Sample:
    """Draw ``size`` items with a controlled positive prevalence.

    Exactly ``round_half_up(prevalence * size)`` positives are drawn, the rest
    negatives, uniformly without replacement within each class.  Successive
    calls with different seeds may reuse pool items.
    """
    if not 0 <= prevalence <= 1:
        raise ValueError(f"prevalence must lie in [0, 1], got {prevalence}")
    if size < 1:
        raise ValueError(f"size must be >= 1, got {size}")
    n_pos = round_half_up(prevalence * size)
    n_neg = size - n_pos
    if n_pos > pool.n_positive:
        raise PoolExhaustionError("positive", n_pos, pool.n_positive)
    if n_neg > pool.n_negative:
        raise PoolExhaustionError("negative", n_neg, pool.n_negative)
    rng = np.random.default_rng(seed)
    chosen = np.concatenate(
        [
            rng.choice(pool.positive_index, n_pos, replace=False),
            rng.choice(pool.negative_index, n_neg, replace=False),
        ]
    ).astype(int)
    rng.shuffle(chosen)
    ds = pool.dataset
    return Sample(_payload_take(ds.x, chosen), ds.labels[chosen])


def sample_uniform(pool: Pool, size: int, seed: int) -> Sample:
    """Draw ``size`` items uniformly without replacement, labels as they fall."""
    if size < 1:
        raise ValueError(f"size must be >= 1, got {size}")
    if size > len(pool):
        raise PoolExhaustionError("any", size, len(pool))
    rng = np.random.default_rng(seed)
    chosen = rng.choice(len(pool), size, replace=False)
    ds = pool.dataset
    return Sample(_payload_take(ds.x, chosen), ds.labels[chosen])
