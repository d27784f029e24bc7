"""Core types and primitives for threshold calibration over nonconformity scores.

Everything here operates on a :class:`ScoreTable` (scores in the unit
interval plus a boolean group-membership matrix) and one of three threshold
model kinds:

* ``Constant`` -- a single scalar threshold,
* ``GroupLinear`` -- a base threshold plus one learned offset per group,
* ``Bucketed`` -- thresholds restricted to the grid ``{0, 1/m, ..., 1}``,
  represented as a base model plus an ordered list of patch operations.

All types are immutable after construction and every evaluation function is
pure, so they are safe to share across threads.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

__all__ = [
    "DataError",
    "GridError",
    "MARGINAL",
    "ScoreTable",
    "GroupCollection",
    "Constant",
    "GroupLinear",
    "Bucketed",
    "ThresholdModel",
    "CalibConfig",
    "derive_seed",
    "pinball_loss",
    "empirical_pinball",
    "empirical_cdf",
    "empirical_quantile",
    "grid_index",
    "round_to_grid",
    "patch",
    "normalize_and_jitter",
]

# Sentinel group index for patches that apply to every row at a grid value.
MARGINAL = None

# Products like q*k land within ~1e-12 of the intended integer for decimal
# q; anything closer than this to an integer is treated as that integer.
_INDEX_GUARD = 1e-9

# Slack for inputs nominally in [0, 1] that drifted by float roundoff.
_UNIT_GUARD = 1e-12


class DataError(ValueError):
    """Empty or degenerate data where a value is required."""


class GridError(ValueError):
    """A threshold or shift that does not live on the working grid."""


def derive_seed(seed: int, label: str) -> int:
    """Stable sub-seed for the stream named ``label``.

    All randomness in a pipeline flows from one user seed; independent
    streams (data generation, per-split jitter, splitting) get their own
    label so that adding a stream never perturbs the others.
    """
    digest = hashlib.sha256(f"{seed}:{label}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


# ---------------------------------------------------------------------------
# domain types


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class ScoreTable:
    """Calibration or test rows: unit-interval scores plus group membership.

    Parameters
    ----------
    scores : array of shape (n,)
        Nonconformity scores, each in [0, 1].
    membership : boolean array of shape (n, n_groups)
        ``membership[i, g]`` is True when row ``i`` belongs to group ``g``.
    scale : (lo, hi), optional
        Original-unit bounds used to normalize the scores; kept so that
        thresholds can be converted back to original units.
    n_clamped : int
        Number of rows whose raw score fell outside explicit bounds and was
        clamped during normalization.
    """

    scores: np.ndarray
    membership: np.ndarray
    scale: Optional[tuple[float, float]] = None
    n_clamped: int = 0

    def __post_init__(self):
        scores = _readonly(np.asarray(self.scores, dtype=float))
        membership = _readonly(np.asarray(self.membership, dtype=bool))
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "membership", membership)
        if scores.ndim != 1:
            raise DataError("scores must be one-dimensional")
        if membership.ndim != 2 or membership.shape[0] != scores.shape[0]:
            raise DataError(
                f"membership shape {membership.shape} does not match "
                f"{scores.shape[0]} score rows"
            )
        if scores.size and (scores.min() < 0.0 or scores.max() > 1.0):
            raise DataError("scores must lie in [0, 1]; normalize first")
        if self.scale is not None:
            lo, hi = self.scale
            if not lo < hi:
                raise DataError(f"scale lo={lo} must be < hi={hi}")
            object.__setattr__(self, "scale", (float(lo), float(hi)))

    @property
    def n(self) -> int:
        return self.scores.shape[0]

    @property
    def n_groups(self) -> int:
        return self.membership.shape[1]

    def group_mask(self, g: Optional[int]) -> np.ndarray:
        """Row mask for group column ``g``; ``MARGINAL`` selects every row."""
        if g is MARGINAL:
            return np.ones(self.n, dtype=bool)
        return self.membership[:, g]


@dataclass(frozen=True)
class GroupCollection:
    """Named groups, one per column of a membership matrix."""

    names: tuple[str, ...]

    def __post_init__(self):
        names = tuple(str(n) for n in self.names)
        object.__setattr__(self, "names", names)
        if len(names) < 1:
            raise DataError("at least one group is required")
        if any(not n for n in names):
            raise DataError("group names must be nonempty")
        if len(set(names)) != len(names):
            raise DataError("group names must be unique")

    def __len__(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        return self.names.index(name)


# ---------------------------------------------------------------------------
# threshold models


def _base_values(base: Union[float, np.ndarray], n: int) -> np.ndarray:
    if np.isscalar(base):
        return np.full(n, float(base))
    arr = np.asarray(base, dtype=float)
    if arr.shape != (n,):
        raise DataError(
            f"per-row base thresholds have length {arr.shape[0]}, table has {n} rows"
        )
    return arr.copy()


@dataclass(frozen=True)
class Constant:
    """A single threshold applied to every row."""

    tau: float

    def thresholds(self, table: ScoreTable) -> np.ndarray:
        return np.full(table.n, float(self.tau))


@dataclass(frozen=True, eq=False)
class GroupLinear:
    """Base thresholds plus one additive offset per group membership.

    A row in groups ``g1, g2`` gets ``base + lam[g1] + lam[g2]``.
    """

    base: Union[float, np.ndarray]
    lam: np.ndarray

    def __post_init__(self):
        lam = _readonly(np.asarray(self.lam, dtype=float))
        object.__setattr__(self, "lam", lam)
        if not np.all(np.isfinite(lam)):
            raise DataError("group offsets must be finite")
        if not np.isscalar(self.base):
            object.__setattr__(self, "base", _readonly(np.asarray(self.base, dtype=float)))

    def thresholds(self, table: ScoreTable) -> np.ndarray:
        if table.n_groups != self.lam.shape[0]:
            raise DataError(
                f"model has {self.lam.shape[0]} group offsets, table has "
                f"{table.n_groups} group columns"
            )
        return _base_values(self.base, table.n) + table.membership @ self.lam


@dataclass(frozen=True, eq=False)
class Bucketed:
    """Grid-valued thresholds: a rounded base plus an ordered patch list.

    Each patch ``(g, v_idx, d_idx)`` moves rows currently at grid index
    ``v_idx`` that belong to group ``g`` (every row when ``g`` is
    ``MARGINAL``) to ``v_idx + d_idx``. Replaying the patch list on equal
    inputs is deterministic, and every reachable threshold stays on the grid
    ``{0, 1/m, ..., 1}`` by construction.
    """

    m: int
    base: Union[float, np.ndarray]
    patches: tuple[tuple[Optional[int], int, int], ...] = ()

    def __post_init__(self):
        if self.m < 2:
            raise GridError(f"grid resolution m={self.m} must be >= 2")
        if not np.isscalar(self.base) and not hasattr(self.base, "thresholds"):
            object.__setattr__(self, "base", _readonly(np.asarray(self.base, dtype=float)))
        norm = []
        for g, v_idx, d_idx in self.patches:
            v_idx = int(v_idx)
            d_idx = int(d_idx)
            if not 0 <= v_idx <= self.m:
                raise GridError(f"patch value index {v_idx} not in [0, {self.m}]")
            if not 0 <= v_idx + d_idx <= self.m:
                raise GridError(
                    f"patch target index {v_idx + d_idx} not in [0, {self.m}]"
                )
            norm.append((None if g is MARGINAL else int(g), v_idx, d_idx))
        object.__setattr__(self, "patches", tuple(norm))

    def grid_indices(self, table: ScoreTable) -> np.ndarray:
        """Per-row grid indices after replaying the patch list in order."""
        if hasattr(self.base, "thresholds"):
            base = self.base.thresholds(table)
        else:
            base = _base_values(self.base, table.n)
        k = grid_index(np.clip(base, 0.0, 1.0), self.m)
        for g, v_idx, d_idx in self.patches:
            mask = k == v_idx
            if g is not MARGINAL:
                mask &= table.membership[:, g]
            k[mask] = v_idx + d_idx
        return k

    def thresholds(self, table: ScoreTable) -> np.ndarray:
        return self.grid_indices(table) / self.m


ThresholdModel = Union[Constant, GroupLinear, Bucketed]


@dataclass(frozen=True)
class CalibConfig:
    """Shared knobs for the calibration fitters.

    ``tol`` of ``None`` means "half a point mass in the smallest group",
    the finest quantile step the calibration data can resolve.
    """

    q: float = 0.9
    alpha: float = 1e-4
    m: int = 100
    tol: Optional[float] = None
    max_iters: int = 1000
    jitter_eps: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.q < 1.0:
            raise DataError(f"target quantile q={self.q} must be in (0, 1)")
        if not self.alpha > 0.0:
            raise DataError(f"tolerance alpha={self.alpha} must be positive")
        if self.m < 2:
            raise GridError(f"grid resolution m={self.m} must be >= 2")
        if self.jitter_eps < 0.0:
            raise DataError("jitter_eps must be >= 0")


# ---------------------------------------------------------------------------
# pinball loss and empirical distribution functions


def pinball_loss(tau, s, q: float):
    """Quantile-regression loss: ``(s - tau) * q`` when the score exceeds the
    threshold, ``(tau - s) * (1 - q)`` otherwise (ties count as covered).

    Accepts scalars or arrays and broadcasts.
    """
    tau = np.asarray(tau, dtype=float)
    s = np.asarray(s, dtype=float)
    out = np.where(s > tau, (s - tau) * q, (tau - s) * (1.0 - q))
    if out.ndim == 0:
        return float(out)
    return out


def empirical_pinball(model: ThresholdModel, table: ScoreTable, q: float) -> float:
    """Mean pinball loss of the model's thresholds over the table."""
    if table.n == 0:
        raise DataError("cannot evaluate pinball loss on an empty table")
    return float(np.mean(pinball_loss(model.thresholds(table), table.scores, q)))


def empirical_cdf(
    model: ThresholdModel, table: ScoreTable, row_mask: Optional[np.ndarray] = None
) -> float:
    """Fraction of selected rows whose score is <= the row's threshold.

    A score exactly equal to its threshold counts as covered. An empty
    selection raises :class:`DataError` rather than returning 0, so callers
    can tell "no coverage" apart from "nothing to cover".
    """
    thr = model.thresholds(table)
    covered = table.scores <= thr
    if row_mask is not None:
        covered = covered[row_mask]
    if covered.size == 0:
        raise DataError("empirical CDF over an empty row selection")
    return int(np.count_nonzero(covered)) / covered.size


def _quantile_index(k: int, q: float, rule: str) -> int:
    if rule == "plain":
        i = math.ceil(q * k - _INDEX_GUARD)
    elif rule == "conservative":
        i = min(math.ceil((k + 1) * q - _INDEX_GUARD), k)
    else:
        raise ValueError(f"unknown quantile rule {rule!r}")
    return min(max(i, 1), k)


def empirical_quantile(values, q: float, rule: str = "plain") -> float:
    """Order-statistic quantile (no interpolation).

    ``plain`` returns the sorted value at 1-based index ``ceil(q * k)``;
    ``conservative`` uses ``min(ceil((k + 1) * q), k)``, the usual split
    conformal small-sample correction.
    """
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise DataError("empirical quantile of an empty sample")
    i = _quantile_index(values.size, q, rule)
    return float(np.sort(values)[i - 1])


# ---------------------------------------------------------------------------
# grid arithmetic and the patch operation


def grid_index(tau, m: int):
    """Nearest grid index to ``tau * m``, exact midpoints rounding up.

    ``tau`` may drift outside [0, 1] by at most 1e-12 (clamped); anything
    further out raises :class:`GridError`.
    """
    arr = np.asarray(tau, dtype=float)
    if np.any(arr < -_UNIT_GUARD) or np.any(arr > 1.0 + _UNIT_GUARD):
        raise GridError("threshold outside [0, 1] cannot be placed on the grid")
    arr = np.clip(arr, 0.0, 1.0)
    k = np.minimum(np.floor(arr * m + 0.5).astype(int), m)
    if k.ndim == 0:
        return int(k)
    return k


def round_to_grid(tau, m: int):
    """Snap thresholds to the nearest multiple of ``1/m`` (midpoints up)."""
    return grid_index(tau, m) / m


def _value_to_index(value: float, m: int, what: str) -> int:
    scaled = value * m
    k = round(scaled)
    if abs(scaled - k) > _INDEX_GUARD:
        raise GridError(f"{what} {value} is not a multiple of 1/{m}")
    return int(k)


def patch(
    model: Bucketed, cell: tuple[Optional[int], float], delta: float
) -> Bucketed:
    """Shift rows in ``cell`` = (group, grid value) by the grid multiple
    ``delta``, leaving every other row untouched.

    Both the cell value and the patched value must be on the grid and in
    [0, 1]. The patch is appended to the model's replay list; ``delta`` of 0
    is legal and evaluates identically to the input model.
    """
    g, v = cell
    v_idx = _value_to_index(float(v), model.m, "cell value")
    d_idx = _value_to_index(float(delta), model.m, "patch shift")
    if not 0 <= v_idx <= model.m:
        raise GridError(f"cell value {v} outside [0, 1]")
    if not 0 <= v_idx + d_idx <= model.m:
        raise GridError(f"patched value {v + delta} outside [0, 1]")
    return Bucketed(
        m=model.m, base=model.base, patches=model.patches + ((g, v_idx, d_idx),)
    )


# ---------------------------------------------------------------------------
# score normalization


def normalize_and_jitter(
    raw_scores,
    jitter_eps: float,
    seed: int,
    bounds: Optional[tuple[float, float]] = None,
) -> tuple[np.ndarray, tuple[float, float], int]:
    """Affinely map raw scores into [0, 1] and add seeded tie-breaking noise.

    With ``bounds`` omitted the observed (min, max) is used; with explicit
    bounds, values outside them are clamped and counted. Jitter draws
    ``uniform(0, jitter_eps)`` per row from ``seed`` and the result is
    clamped back into [0, 1].

    Returns ``(scores, (lo, hi), n_clamped)``.
    """
    raw = np.asarray(raw_scores, dtype=float)
    if raw.size == 0:
        raise DataError("cannot normalize an empty score vector")
    if bounds is None:
        lo, hi = float(raw.min()), float(raw.max())
        if lo == hi:
            raise DataError(
                "all raw scores are equal; supply explicit (lo, hi) bounds"
            )
        n_clamped = 0
        scores = (raw - lo) / (hi - lo)
    else:
        lo, hi = float(bounds[0]), float(bounds[1])
        if not lo < hi:
            raise DataError(f"bounds lo={lo} must be < hi={hi}")
        n_clamped = int(np.count_nonzero((raw < lo) | (raw > hi)))
        scores = np.clip((raw - lo) / (hi - lo), 0.0, 1.0)
    if jitter_eps > 0.0:
        rng = np.random.default_rng(seed)
        scores = scores + rng.uniform(0.0, jitter_eps, size=scores.size)
    scores = np.clip(scores, 0.0, 1.0)
    return scores, (lo, hi), n_clamped
