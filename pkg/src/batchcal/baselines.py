"""Reference calibration methods: naive split conformal and per-group max.

The naive method ignores groups entirely and thresholds at a single
empirical quantile of the calibration scores. The conservative method
calibrates one threshold per group and, at prediction time, takes the
largest threshold among the groups a row belongs to, falling back to the
marginal threshold for rows in no group.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .core import (
    Constant,
    DataError,
    GroupCollection,
    ScoreTable,
    _readonly,
    empirical_quantile,
)

__all__ = ["ConservativeFit", "fit_naive", "fit_conservative", "predict_conservative"]


def fit_naive(table: ScoreTable, q: float, rule: str = "conservative") -> Constant:
    """Single-threshold split conformal: the empirical q-quantile of the
    calibration scores (conservative order statistic by default)."""
    if table.n == 0:
        raise DataError("cannot fit on an empty table")
    return Constant(empirical_quantile(table.scores, q, rule))


@dataclass(frozen=True, eq=False)
class ConservativeFit:
    """Per-group thresholds plus a marginal fallback for group-less rows."""

    tau_groups: np.ndarray
    tau_marginal: float
    rule: str = "conservative"

    def __post_init__(self):
        object.__setattr__(
            self, "tau_groups", _readonly(np.asarray(self.tau_groups, dtype=float))
        )

    def thresholds(self, table: ScoreTable) -> np.ndarray:
        if table.n_groups != self.tau_groups.shape[0]:
            raise DataError(
                f"fit has {self.tau_groups.shape[0]} group thresholds, table has "
                f"{table.n_groups} group columns"
            )
        per_row = np.where(table.membership, self.tau_groups[np.newaxis, :], -np.inf)
        thr = per_row.max(axis=1, initial=-np.inf)
        return np.where(np.isneginf(thr), self.tau_marginal, thr)


def fit_conservative(
    table: ScoreTable, groups: GroupCollection, q: float, rule: str = "conservative"
) -> ConservativeFit:
    """One quantile per group; empty groups fall back to the marginal."""
    if table.n == 0:
        raise DataError("cannot fit on an empty table")
    tau_marginal = empirical_quantile(table.scores, q, rule)
    taus = np.empty(len(groups))
    for gi, name in enumerate(groups.names):
        member = table.scores[table.membership[:, gi]]
        if member.size == 0:
            warnings.warn(
                f"group {name!r} has no calibration rows; using marginal threshold"
            )
            taus[gi] = tau_marginal
        else:
            taus[gi] = empirical_quantile(member, q, rule)
    return ConservativeFit(tau_groups=taus, tau_marginal=tau_marginal, rule=rule)


def predict_conservative(fit: ConservativeFit, member_row) -> float:
    """Threshold for one row: max over its groups, marginal if it has none."""
    member_row = np.asarray(member_row, dtype=bool)
    if not member_row.any():
        return float(fit.tau_marginal)
    return float(fit.tau_groups[member_row].max())
