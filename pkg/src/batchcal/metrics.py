"""Audit metrics: coverage, quantile calibration error, per-cell tables,
worst-case bound checks, set widths, and the finite-sample tolerance
calculator.

Float discipline: the per-cell quantities below are computed through one
shared code path (:func:`_group_cells` / :func:`_q_terms`), so the halting
check inside the multivalid fitter, a post-hoc audit of the same model, and
the per-cell bound check all see bit-identical numbers. Sums of nonnegative
terms can only round upward past any single term, which is what makes the
"bound check is empty after a passing fit" guarantee exact rather than
approximate.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import DataError, GroupCollection, ScoreTable, round_to_grid

__all__ = [
    "CellRow",
    "BoundViolation",
    "EvalReport",
    "group_coverage",
    "calibration_error_Q",
    "cell_coverage_table",
    "claim_bound_check",
    "mean_set_width",
    "generalization_alpha_prime",
    "build_report",
]


def _group_cells(thr_g: np.ndarray, covered_g: np.ndarray):
    """Nonempty level-set cells of one group, in ascending threshold order.

    Returns ``(values, counts, covered_counts)`` as arrays.
    """
    values, inverse = np.unique(thr_g, return_inverse=True)
    counts = np.bincount(inverse, minlength=values.size)
    covered_counts = np.bincount(inverse[covered_g], minlength=values.size)
    return values, counts, covered_counts


def _q_terms(counts: np.ndarray, covered_counts: np.ndarray, denom: int, q: float):
    """Per-cell calibration terms ``(count/denom) * (q - coverage)^2``."""
    return (counts / denom) * (q - covered_counts / counts) ** 2


def group_coverage(model, table: ScoreTable, groups: GroupCollection) -> dict:
    """Per-group fraction of rows with score at or below the threshold.

    Groups with no rows in the table are omitted from the result.
    """
    if table.n == 0:
        raise DataError("cannot evaluate coverage on an empty table")
    covered = table.scores <= model.thresholds(table)
    out = {}
    for gi, name in enumerate(groups.names):
        mask = table.membership[:, gi]
        n_g = int(np.count_nonzero(mask))
        if n_g == 0:
            continue
        out[name] = int(np.count_nonzero(covered & mask)) / n_g
    return out


def calibration_error_Q(model, table: ScoreTable, g: int, q: float) -> float:
    """Quantile calibration error of the model on group ``g``: the
    group-conditional mass of each threshold level set times the squared
    deviation of that cell's coverage from ``q``, summed over nonempty
    cells."""
    mask = table.membership[:, g]
    n_g = int(np.count_nonzero(mask))
    if n_g == 0:
        raise DataError(f"group column {g} has no rows in the table")
    thr = model.thresholds(table)
    covered = table.scores <= thr
    _, counts, covered_counts = _group_cells(thr[mask], covered[mask])
    return float(_q_terms(counts, covered_counts, n_g, q).sum())


@dataclass(frozen=True)
class CellRow:
    group: str
    v: float
    count: int
    covered: int
    coverage: float


def cell_coverage_table(
    model, table: ScoreTable, groups: GroupCollection, grid_m: int | None = None
) -> list[CellRow]:
    """Coverage per (group, threshold value) cell with at least one row.

    Coverage always uses the model's actual thresholds. With ``grid_m``
    given, cells are keyed by the threshold rounded to that grid, which is
    the identity for grid-valued models and keeps the table small for
    models with continuous thresholds.
    """
    thr = model.thresholds(table)
    covered = table.scores <= thr
    keys = round_to_grid(np.clip(thr, 0.0, 1.0), grid_m) if grid_m else thr
    rows: list[CellRow] = []
    for gi, name in enumerate(groups.names):
        mask = table.membership[:, gi]
        if not mask.any():
            continue
        values, counts, covered_counts = _group_cells(keys[mask], covered[mask])
        for v, c, cc in zip(values, counts, covered_counts):
            rows.append(CellRow(name, float(v), int(c), int(cc), int(cc) / int(c)))
    return rows


@dataclass(frozen=True)
class BoundViolation:
    group: str
    v: float
    coverage: float
    bound: float


def claim_bound_check(
    model, table: ScoreTable, groups: GroupCollection, q: float, alpha: float
) -> list[BoundViolation]:
    """Cells whose coverage deviates from ``q`` past the per-cell tolerance
    ``sqrt(alpha / joint cell mass)``.

    The comparison runs in the squared domain through the same arithmetic
    as :func:`calibration_error_Q`, so any model whose per-group error
    passes the ``alpha`` budget on this table yields an empty list, exactly.
    """
    thr = model.thresholds(table)
    covered = table.scores <= thr
    n = table.n
    violations: list[BoundViolation] = []
    for gi, name in enumerate(groups.names):
        mask = table.membership[:, gi]
        n_g = int(np.count_nonzero(mask))
        if n_g == 0:
            continue
        values, counts, covered_counts = _group_cells(thr[mask], covered[mask])
        contributions = _q_terms(counts, covered_counts, n_g, q) * (n_g / n)
        for j in np.flatnonzero(contributions > alpha):
            mass = counts[j] / n
            violations.append(
                BoundViolation(
                    group=name,
                    v=float(values[j]),
                    coverage=int(covered_counts[j]) / int(counts[j]),
                    bound=math.sqrt(alpha / mass),
                )
            )
    return violations


def mean_set_width(
    model,
    table: ScoreTable,
    groups: GroupCollection,
    residual_scores: bool = True,
) -> tuple[dict, str]:
    """Per-group mean prediction-set width.

    For absolute-residual scores the set is an interval of width
    ``2 * threshold`` in original units, so the table's scale is required.
    For other score types there is no unit-level notion of width and the
    mean threshold is reported instead, flagged as such.

    Returns ``(per-group values, kind)`` with kind ``"interval"`` or
    ``"threshold"``.
    """
    thr = model.thresholds(table)
    if residual_scores:
        if table.scale is None:
            raise DataError("interval widths require the table's (lo, hi) scale")
        lo, hi = table.scale
        per_row = 2.0 * thr * (hi - lo)
        kind = "interval"
    else:
        per_row = thr
        kind = "threshold"
    out = {}
    for gi, name in enumerate(groups.names):
        mask = table.membership[:, gi]
        if mask.any():
            out[name] = float(per_row[mask].mean())
    return out, kind


def generalization_alpha_prime(
    alpha: float, rho: float, T: int, n: int, n_groups: int, delta: float
) -> float:
    """Out-of-sample calibration tolerance implied by an ``alpha``-level fit
    that ran ``T`` rounds on ``n`` calibration points.

    Valid for positive inputs with ``delta`` in (0, 1); raises when a log
    argument or the bracketed term is nonpositive.
    """
    if min(alpha, rho, T, n, n_groups) <= 0:
        raise ValueError("alpha, rho, T, n, and the group count must be positive")
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta={delta} must be in (0, 1)")
    arg1 = 4.0 * math.pi**2 * T**2 / (3.0 * delta)
    arg2 = rho**4 * n_groups / alpha**2
    if arg1 <= 0.0 or arg2 <= 0.0:
        raise ValueError("log arguments must be positive")
    bracket = math.log(arg1) + T * math.log(arg2)
    if bracket < 0.0:
        raise ValueError("complexity term is negative; tolerance is undefined")
    return (
        alpha
        + 21.0 * math.sqrt(3.0 * rho**2 * bracket / (2.0 * alpha * n))
        + 12.0 * rho**2 * bracket / (alpha * n)
    )


# ---------------------------------------------------------------------------
# report assembly


@dataclass(frozen=True)
class EvalReport:
    """Everything the reporting layer emits for one (model, table) pair."""

    method: str
    q: float
    alpha: float
    n_rows: int
    marginal_coverage: float
    group_names: tuple[str, ...]
    group_n: tuple[int, ...]
    group_coverage: tuple[float, ...]
    group_calibration_error: tuple[float, ...]
    group_mean_threshold: tuple[float, ...]
    group_mean_width: tuple[float, ...]
    width_kind: str
    cells: tuple[CellRow, ...]
    bound_violations: tuple[BoundViolation, ...]
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "q": self.q,
            "alpha": self.alpha,
            "n_rows": self.n_rows,
            "marginal_coverage": self.marginal_coverage,
            "width_kind": self.width_kind,
            "groups": [
                {
                    "name": name,
                    "n": n,
                    "coverage": cov,
                    "calibration_error": err,
                    "mean_threshold": thr,
                    "mean_width": width,
                }
                for name, n, cov, err, thr, width in zip(
                    self.group_names,
                    self.group_n,
                    self.group_coverage,
                    self.group_calibration_error,
                    self.group_mean_threshold,
                    self.group_mean_width,
                )
            ],
            "cells": [
                {
                    "group": c.group,
                    "v": c.v,
                    "count": c.count,
                    "covered": c.covered,
                    "coverage": c.coverage,
                }
                for c in self.cells
            ],
            "bound_violations": [
                {
                    "group": b.group,
                    "v": b.v,
                    "coverage": b.coverage,
                    "bound": b.bound,
                }
                for b in self.bound_violations
            ],
            "metadata": self.metadata,
        }


def build_report(
    model,
    table: ScoreTable,
    groups: GroupCollection,
    *,
    q: float,
    alpha: float,
    method: str,
    residual_scores: bool = True,
    grid_m: int | None = None,
    metadata: dict | None = None,
) -> EvalReport:
    """Assemble the full audit of one model on one table."""
    if table.n == 0:
        raise DataError("cannot evaluate on an empty table")
    thr = model.thresholds(table)
    covered = table.scores <= thr

    names, sizes, coverages, qerrs, mean_thr, mean_width = [], [], [], [], [], []
    widths, width_kind = mean_set_width(model, table, groups, residual_scores)
    for gi, name in enumerate(groups.names):
        mask = table.membership[:, gi]
        n_g = int(np.count_nonzero(mask))
        if n_g == 0:
            warnings.warn(f"group {name!r} has no rows in the evaluation table")
            continue
        names.append(name)
        sizes.append(n_g)
        coverages.append(int(np.count_nonzero(covered & mask)) / n_g)
        qerrs.append(calibration_error_Q(model, table, gi, q))
        mean_thr.append(float(thr[mask].mean()))
        mean_width.append(widths[name])

    meta = dict(metadata or {})
    meta.setdefault("n_clamped", table.n_clamped)
    return EvalReport(
        method=method,
        q=q,
        alpha=alpha,
        n_rows=table.n,
        marginal_coverage=int(np.count_nonzero(covered)) / table.n,
        group_names=tuple(names),
        group_n=tuple(sizes),
        group_coverage=tuple(coverages),
        group_calibration_error=tuple(qerrs),
        group_mean_threshold=tuple(mean_thr),
        group_mean_width=tuple(mean_width),
        width_kind=width_kind,
        cells=tuple(cell_coverage_table(model, table, groups, grid_m=grid_m)),
        bound_violations=tuple(claim_bound_check(model, table, groups, q, alpha)),
        metadata=meta,
    )
