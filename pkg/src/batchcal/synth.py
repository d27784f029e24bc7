"""Seeded synthetic benchmarks.

Two tasks:

* a linear regression task whose label noise grows with membership in
  paired binary-feature groups, scored by the absolute residual of a least
  squares predictor trained on a held-out split;
* a divisibility task over random integers where the unit-interval label
  itself is the quantity being quantile-calibrated, with one group per
  divisor up to 15 (so group 1 is the whole space).

Generation is a pure function of (config, seed): sub-streams are derived
with fixed labels so regenerating any split is reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    DataError,
    GroupCollection,
    ScoreTable,
    derive_seed,
    normalize_and_jitter,
)

__all__ = [
    "LinearNoiseConfig",
    "DivisibleConfig",
    "LinearTaskData",
    "DivisibleTaskData",
    "gen_linear_group_noise",
    "gen_divisible_task",
]


@dataclass(frozen=True)
class LinearNoiseConfig:
    """Linear task: 10 binary + 90 continuous features, label noise variance
    ``base_var + sum(i for binary feature i set)``, 20 groups keyed to the
    binary feature values."""

    n_train: int = 5000
    n_calib: int = 15000
    n_test: int = 20000
    n_binary: int = 10
    n_continuous: int = 90
    sigma_x: float = 1.0
    base_var: float = 1.0
    noise_scale: float = 1.0  # multiplies every per-feature variance term
    jitter_eps: float = 1e-6
    seed: int = 0

    @property
    def n_total(self) -> int:
        return self.n_train + self.n_calib + self.n_test

    def __post_init__(self):
        if min(self.n_train, self.n_calib, self.n_test) < 1:
            raise DataError("every split needs at least one row")


@dataclass(frozen=True)
class DivisibleConfig:
    """Divisibility task: integers in [1, x_max), 15 divisor groups, label
    ``|y'| / (|y'| + 1)`` with ``y'`` a sum of one standard normal per group
    the integer belongs to."""

    n: int = 10000
    x_max: int = 5000
    n_divisors: int = 15
    calib_fraction: float = 0.8
    jitter_eps: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if self.n < 2:
            raise DataError("need at least two rows to split")
        if not 0.0 < self.calib_fraction < 1.0:
            raise DataError("calib_fraction must be in (0, 1)")


@dataclass(frozen=True, eq=False)
class LinearTaskData:
    groups: GroupCollection
    calib: ScoreTable
    test: ScoreTable
    # Raw per-split predictions and labels, for CSV export.
    calib_pred: np.ndarray
    calib_label: np.ndarray
    test_pred: np.ndarray
    test_label: np.ndarray
    theta: np.ndarray
    theta_hat: np.ndarray


@dataclass(frozen=True, eq=False)
class DivisibleTaskData:
    groups: GroupCollection
    calib: ScoreTable
    test: ScoreTable
    calib_score: np.ndarray
    test_score: np.ndarray
    calib_x: np.ndarray
    test_x: np.ndarray


def _parity_groups(x_binary: np.ndarray) -> tuple[np.ndarray, GroupCollection]:
    """Two complementary groups per binary feature: feature i off / on."""
    n, n_binary = x_binary.shape
    membership = np.empty((n, 2 * n_binary), dtype=bool)
    names = []
    for i in range(n_binary):
        membership[:, 2 * i] = x_binary[:, i] == 0
        membership[:, 2 * i + 1] = x_binary[:, i] == 1
        names.append(f"x{i + 1}=0")
        names.append(f"x{i + 1}=1")
    return membership, GroupCollection(tuple(names))


def gen_linear_group_noise(config: LinearNoiseConfig) -> LinearTaskData:
    """Draw the linear task, train the least squares predictor on the train
    split, and score the other splits by absolute residual.

    Scores are normalized to [0, 1] using the calibration split's range and
    jittered; test rows falling outside that range are clamped and counted.
    """
    rng = np.random.default_rng(derive_seed(config.seed, "linear-data"))
    n = config.n_total
    x_binary = rng.integers(0, 2, size=(n, config.n_binary))
    x_cont = rng.normal(0.0, config.sigma_x, size=(n, config.n_continuous))
    x = np.concatenate([x_binary.astype(float), x_cont], axis=1)

    theta = rng.normal(0.0, 1.0, size=x.shape[1])
    feature_vars = np.arange(1, config.n_binary + 1, dtype=float)
    noise_var = config.noise_scale * (
        config.base_var + x_binary @ feature_vars
    )
    y = x @ theta + np.sqrt(noise_var) * rng.normal(0.0, 1.0, size=n)

    tr = slice(0, config.n_train)
    ca = slice(config.n_train, config.n_train + config.n_calib)
    te = slice(config.n_train + config.n_calib, n)

    # Ordinary least squares via the normal equations on the train split.
    gram = x[tr].T @ x[tr]
    theta_hat = np.linalg.solve(gram, x[tr].T @ y[tr])
    pred = x @ theta_hat

    raw = np.abs(pred - y)
    calib_scores, scale, _ = normalize_and_jitter(
        raw[ca], config.jitter_eps, derive_seed(config.seed, "jitter:calib")
    )
    test_scores, _, n_clamped = normalize_and_jitter(
        raw[te],
        config.jitter_eps,
        derive_seed(config.seed, "jitter:test"),
        bounds=scale,
    )

    membership, groups = _parity_groups(x_binary)
    return LinearTaskData(
        groups=groups,
        calib=ScoreTable(calib_scores, membership[ca], scale=scale),
        test=ScoreTable(test_scores, membership[te], scale=scale, n_clamped=n_clamped),
        calib_pred=pred[ca],
        calib_label=y[ca],
        test_pred=pred[te],
        test_label=y[te],
        theta=theta,
        theta_hat=theta_hat,
    )


def divisor_membership(x: np.ndarray, n_divisors: int) -> np.ndarray:
    """membership[i, j] is True when ``x[i]`` is a multiple of ``j + 1``."""
    divisors = np.arange(1, n_divisors + 1)
    return (np.asarray(x)[:, np.newaxis] % divisors[np.newaxis, :]) == 0


def gen_divisible_task(config: DivisibleConfig) -> DivisibleTaskData:
    """Draw the divisibility task; the label in [0, 1) is used directly as
    the score to calibrate."""
    rng = np.random.default_rng(derive_seed(config.seed, "divisible-data"))
    x = rng.integers(1, config.x_max, size=config.n)
    membership = divisor_membership(x, config.n_divisors)
    n_groups_per_row = membership.sum(axis=1)

    y_prime = rng.normal(0.0, 1.0, size=config.n) * np.sqrt(n_groups_per_row)
    y = np.abs(y_prime) / (np.abs(y_prime) + 1.0)

    n_calib = int(round(config.n * config.calib_fraction))
    n_calib = min(max(n_calib, 1), config.n - 1)
    ca, te = slice(0, n_calib), slice(n_calib, config.n)

    calib_scores, scale, _ = normalize_and_jitter(
        y[ca],
        config.jitter_eps,
        derive_seed(config.seed, "jitter:calib"),
        bounds=(0.0, 1.0),
    )
    test_scores, _, _ = normalize_and_jitter(
        y[te],
        config.jitter_eps,
        derive_seed(config.seed, "jitter:test"),
        bounds=(0.0, 1.0),
    )

    names = tuple(f"div{j}" for j in range(1, config.n_divisors + 1))
    return DivisibleTaskData(
        groups=GroupCollection(names),
        calib=ScoreTable(calib_scores, membership[ca], scale=scale),
        test=ScoreTable(test_scores, membership[te], scale=scale),
        calib_score=y[ca],
        test_score=y[te],
        calib_x=x[ca],
        test_x=x[te],
    )
