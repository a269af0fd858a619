"""Rendering of record streams into tables and boxplot-ready quantile data."""

from __future__ import annotations

import io
from typing import Sequence

import numpy as np

from .evaluation import (
    ExperimentRecord,
    SignificanceMark,
    mae_by_degree,
    mark_significance,
)
from .quantifiers import METHOD_NAMES

_MARK_SUFFIX = {
    SignificanceMark.BEST: "",
    SignificanceMark.DAGGER: "†",
    SignificanceMark.DDAGGER: "‡",
    SignificanceMark.NONE: "",
}


def _method_columns(records: Sequence[ExperimentRecord]) -> list[str]:
    present = {r.method for r in records}
    ordered = [m for m in METHOD_NAMES if m in present]
    return ordered + sorted(present - set(ordered))


def _aligned_ae_vectors(
    records: Sequence[ExperimentRecord],
) -> dict[str, np.ndarray]:
    """Per-method AE vectors aligned by (repetition, configuration)."""
    table: dict[str, dict[tuple, float]] = {}
    for rec in records:
        table.setdefault(rec.method, {})[(rec.repetition, rec.config)] = rec.ae
    keys = sorted({k for rows in table.values() for k in rows})
    vectors = {}
    for method, rows in table.items():
        if len(rows) != len(keys):
            missing = set(keys) - set(rows)
            raise ValueError(
                f"misaligned records: method {method} lacks {len(missing)} sample(s)"
            )
        vectors[method] = np.array([rows[k] for k in keys])
    return vectors


def degree_table(
    records: Sequence[ExperimentRecord],
) -> list[tuple[float, dict[str, float], dict[str, SignificanceMark]]]:
    """Rows of (degree, MAE by method, marks by method), degrees ascending.

    With a single method no significance testing applies and marks are empty.
    """
    if not records:
        raise ValueError("no records to report")
    mae = mae_by_degree(records)
    by_degree: dict[float, list[ExperimentRecord]] = {}
    for rec in records:
        by_degree.setdefault(rec.degree, []).append(rec)
    rows = []
    for degree in sorted(mae):
        marks: dict[str, SignificanceMark] = {}
        if len(mae[degree]) >= 2:
            marks = mark_significance(_aligned_ae_vectors(by_degree[degree]))
        rows.append((degree, mae[degree], marks))
    return rows


def _fmt_mae(value: float) -> str:
    out = f"{value:.3f}"
    return out[1:] if out.startswith("0.") else out


def render_markdown(records: Sequence[ExperimentRecord]) -> str:
    """MAE-by-degree markdown table; best per row in bold, daggers appended."""
    methods = _method_columns(records)
    rows = degree_table(records)
    out = io.StringIO()
    out.write("| degree | " + " | ".join(methods) + " |\n")
    out.write("|---:|" + "---:|" * len(methods) + "\n")
    for degree, mae, marks in rows:
        cells = []
        for m in methods:
            if m not in mae:
                cells.append("-")
                continue
            text = _fmt_mae(mae[m])
            mark = marks.get(m)
            if mark is SignificanceMark.BEST:
                text = f"**{text}**"
            else:
                text += _MARK_SUFFIX.get(mark, "")
            cells.append(text)
        out.write(f"| {format(degree, 'g')} | " + " | ".join(cells) + " |\n")
    return out.getvalue()


def render_table_csv(records: Sequence[ExperimentRecord]) -> str:
    """Machine-readable table: degree,method,mae,mark."""
    out = io.StringIO()
    out.write("degree,method,mae,mark\n")
    for degree, mae, marks in degree_table(records):
        for m in _method_columns(records):
            if m not in mae:
                continue
            mark = marks.get(m)
            out.write(
                f"{format(degree, 'g')},{m},{mae[m]!r},"
                f"{mark.value if mark else 'none'}\n"
            )
    return out.getvalue()


def boxplot_stats(values: Sequence[float]) -> dict:
    """Five-number boxplot summary with 1.5*IQR whiskers.

    Quartiles use linear interpolation between order statistics (the default
    numpy rule); whiskers sit on the most extreme observations within
    1.5*IQR of the quartiles, and anything beyond is listed as an outlier.
    """
    v = np.sort(np.asarray(values, dtype=float))
    q1, median, q3 = np.quantile(v, [0.25, 0.5, 0.75])
    iqr = q3 - q1
    lo_fence, hi_fence = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    inside = v[(v >= lo_fence) & (v <= hi_fence)]
    outliers = v[(v < lo_fence) | (v > hi_fence)]
    return {
        "min": float(inside.min()),
        "q1": float(q1),
        "median": float(median),
        "q3": float(q3),
        "max": float(inside.max()),
        "outliers": [float(x) for x in outliers],
    }


def render_plotdata(records: Sequence[ExperimentRecord]) -> str:
    """Per-(degree, method) boxplot numbers: whisker ends, quartiles, outliers."""
    if not records:
        raise ValueError("no records to report")
    groups: dict[tuple[float, str], list[float]] = {}
    for rec in records:
        groups.setdefault((rec.degree, rec.method), []).append(rec.ae)
    methods = _method_columns(records)
    out = io.StringIO()
    out.write("degree,method,min,q1,median,q3,max,outliers\n")
    for degree in sorted({d for d, _ in groups}):
        for m in methods:
            if (degree, m) not in groups:
                continue
            s = boxplot_stats(groups[(degree, m)])
            outliers = ";".join(repr(x) for x in s["outliers"])
            out.write(
                f"{format(degree, 'g')},{m},{s['min']!r},{s['q1']!r},"
                f"{s['median']!r},{s['q3']!r},{s['max']!r},{outliers}\n"
            )
    return out.getvalue()
