"""Error measures, aggregation by shift degree, and paired significance tests.

One :class:`ExperimentRecord` is one evaluated test sample.  The Wilcoxon
signed-rank test pairs records of two methods by (repetition, configuration),
uses the exact sign-flip distribution for up to 25 non-zero differences, and
a tie- and continuity-corrected normal approximation beyond that.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

EXACT_LIMIT = 25  # largest n handled by exact sign-assignment enumeration


@dataclass(frozen=True)
class ExperimentRecord:
    """One evaluation row: a method's estimate on one generated test sample."""

    protocol: str
    method: str
    repetition: int
    config: str
    degree: float
    true_prevalence: float
    estimate: float
    ae: float = field(init=False)

    def __post_init__(self):
        if not 0.0 <= self.estimate <= 1.0:
            raise ValueError(f"estimate must lie in [0, 1], got {self.estimate}")
        object.__setattr__(self, "ae", abs(self.true_prevalence - self.estimate))

    def csv_row(self) -> list[str]:
        return [
            self.protocol,
            self.method,
            str(self.repetition),
            self.config,
            repr(self.degree),
            repr(self.true_prevalence),
            repr(self.estimate),
            repr(self.ae),
        ]


CSV_HEADER = ("protocol", "method", "repetition", "config",
              "degree", "true_prev", "est_prev", "ae")


def write_records_csv(records: Iterable[ExperimentRecord], path: str | Path) -> int:
    """Write records as UTF-8 CSV with LF line endings; returns the row count."""
    n = 0
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for rec in records:
            writer.writerow(rec.csv_row())
            n += 1
    return n


def read_records_csv(path: str | Path) -> list[ExperimentRecord]:
    records = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != list(CSV_HEADER):
            raise ValueError(f"{path}: unexpected records header {header}")
        for row in reader:
            records.append(
                ExperimentRecord(
                    protocol=row[0],
                    method=row[1],
                    repetition=int(row[2]),
                    config=row[3],
                    degree=float(row[4]),
                    true_prevalence=float(row[5]),
                    estimate=float(row[6]),
                )
            )
    return records


def absolute_error(true_prevalence: float, estimate: float) -> float:
    """|p - p_hat|; both arguments must already be prevalences in [0, 1]."""
    if not 0.0 <= true_prevalence <= 1.0:
        raise ValueError(f"true prevalence out of [0, 1]: {true_prevalence}")
    if not 0.0 <= estimate <= 1.0:
        raise ValueError(f"estimate out of [0, 1]: {estimate}")
    return abs(true_prevalence - estimate)


def mae_by_degree(
    records: Sequence[ExperimentRecord],
) -> dict[float, dict[str, float]]:
    """Mean AE grouped by (shift degree, method), pooling repetitions."""
    if not records:
        raise ValueError("no records to aggregate")
    sums: dict[float, dict[str, list[float]]] = {}
    for rec in records:
        sums.setdefault(rec.degree, {}).setdefault(rec.method, []).append(rec.ae)
    return {
        degree: {method: float(np.mean(aes)) for method, aes in methods.items()}
        for degree, methods in sums.items()
    }


def wilcoxon_signed_rank(a: Sequence[float], b: Sequence[float]) -> float:
    """Two-sided Wilcoxon signed-rank p-value for paired observations.

    Zero differences are dropped; tied absolute differences share average
    ranks.  With no remaining pairs the samples are indistinguishable and the
    p-value is 1.  Between 1 and 4 remaining pairs the test is undefined here
    (it could never reach significance anyway) and raises.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"paired vectors differ in length: {a.shape} vs {b.shape}")
    d = a - b
    d = d[d != 0]
    n = len(d)
    if n == 0:
        return 1.0
    if n < 5:
        raise ValueError(f"need >= 5 non-zero differences, got {n}")
    ranks = rankdata(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    if n <= EXACT_LIMIT:
        return _exact_p(ranks, w_plus)
    return _normal_p(ranks, w_plus, n)


def _exact_p(ranks: np.ndarray, w_plus: float) -> float:
    """Exact p over all 2^n sign assignments of the (tied-)rank vector.

    Ranks with ties averaged are multiples of 0.5, so doubling them makes an
    integer convolution; the distribution of W+ over sign assignments is
    built by dynamic programming, equivalent to enumerating all 2^n of them.
    """
    doubled = np.rint(2.0 * ranks).astype(int)
    total = int(doubled.sum())
    # counts[v] = number of sign assignments with doubled W+ equal to v
    counts = np.zeros(total + 1)
    counts[0] = 1.0
    for r in doubled:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: len(counts) - r]
        counts = counts + shifted
    w2 = int(round(2.0 * w_plus))
    n_assignments = counts.sum()
    p_low = counts[: w2 + 1].sum() / n_assignments
    p_high = counts[w2:].sum() / n_assignments
    return float(min(1.0, 2.0 * min(p_low, p_high)))


def _normal_p(ranks: np.ndarray, w_plus: float, n: int) -> float:
    mu = n * (n + 1) / 4.0
    var = n * (n + 1) * (2 * n + 1) / 24.0
    _, tie_counts = np.unique(ranks, return_counts=True)
    var -= (tie_counts**3 - tie_counts).sum() / 48.0
    if w_plus == mu:
        return 1.0
    # continuity correction of 0.5 toward the mean
    z = (w_plus - mu - 0.5 * math.copysign(1.0, w_plus - mu)) / math.sqrt(var)
    return float(min(1.0, math.erfc(abs(z) / math.sqrt(2.0))))


class SignificanceMark(Enum):
    """Marking scheme for comparisons against the per-group best method."""

    BEST = "best"
    DAGGER = "dagger"      # 0.001 < p < 0.05: somewhat similar to the best
    DDAGGER = "ddagger"    # p >= 0.05: very similar to the best
    NONE = "none"          # p <= 0.001: clearly different from the best


def mark_significance(
    ae_vectors: Mapping[str, Sequence[float]],
) -> dict[str, SignificanceMark]:
    """Mark each method against the lowest-mean-AE method of the group.

    Vectors must be aligned (same test samples in the same order).  Ties on
    the mean break lexicographically so exactly one method is BEST.  Pairs
    with fewer than 5 non-zero differences get DDAGGER: so few disagreements
    can never reach the 0.05 level.
    """
    if len(ae_vectors) < 2:
        raise ValueError("need at least two methods to compare")
    lengths = {len(v) for v in ae_vectors.values()}
    if len(lengths) != 1:
        raise ValueError(f"misaligned AE vectors: lengths {sorted(lengths)}")
    means = {m: float(np.mean(np.asarray(v, dtype=float))) for m, v in ae_vectors.items()}
    best = min(means, key=lambda m: (means[m], m))
    best_vec = np.asarray(ae_vectors[best], dtype=float)
    marks = {best: SignificanceMark.BEST}
    for method, vec in ae_vectors.items():
        if method == best:
            continue
        vec = np.asarray(vec, dtype=float)
        nonzero = int((vec != best_vec).sum())
        p = 1.0 if nonzero < 5 else wilcoxon_signed_rank(best_vec, vec)
        if p >= 0.05:
            marks[method] = SignificanceMark.DDAGGER
        elif p > 0.001:
            marks[method] = SignificanceMark.DAGGER
        else:
            marks[method] = SignificanceMark.NONE
    return marks
