"""Batch conformal calibration with group-conditional and multivalid coverage.

The package fits threshold functions over nonconformity scores so that the
induced prediction sets cover at the target rate not just marginally but
conditionally on membership in arbitrary, possibly intersecting groups
(``fit_gcp``) and additionally on the emitted threshold value itself
(``fit_mvp``). Split-conformal baselines, audit metrics, synthetic
benchmarks, and a CLI harness round out the toolkit.
"""

from .baselines import ConservativeFit, fit_conservative, fit_naive, predict_conservative
from .core import (
    Bucketed,
    CalibConfig,
    Constant,
    DataError,
    GridError,
    GroupCollection,
    GroupLinear,
    MARGINAL,
    ScoreTable,
    derive_seed,
    empirical_cdf,
    empirical_pinball,
    empirical_quantile,
    normalize_and_jitter,
    patch,
    pinball_loss,
    round_to_grid,
)
from .gcp import GcpFit, coordinate_shift, fit_gcp
from .metrics import (
    EvalReport,
    build_report,
    calibration_error_Q,
    cell_coverage_table,
    claim_bound_check,
    generalization_alpha_prime,
    group_coverage,
    mean_set_width,
)
from .mvp import (
    FitTrace,
    best_patch_delta,
    cell_error,
    fit_mvp,
    multicalibration_check,
    worst_cell,
)
from .synth import (
    DivisibleConfig,
    LinearNoiseConfig,
    gen_divisible_task,
    gen_linear_group_noise,
)

__version__ = "0.1.0"
