"""Area between two survival curves, its permutation test, and comparators."""

from importlib import resources

from .abs_engine import (
    AbsResult,
    IntervalSpec,
    PermutationResult,
    abs_confidence_interval,
    abs_measure,
    abs_normal_test,
    abs_statistic,
    delta_statistic,
    null_delta_diagnostic,
    null_moments,
    permutation_test,
)
from .comparators import TestResult, hazard_ratio, logrank_test, rmst, rmst_difference_test
from .surv_core import (
    Observation,
    PooledGrid,
    Sample,
    StepCurve,
    eval_surv,
    follow_up_end,
    km_estimate,
    median_survival,
    pooled_grid,
)

__version__ = "0.1.0"


def kidney_csv_path():
    """Path of the bundled kidney catheter infection data (time, delta, type)."""
    return resources.files(__package__) / "data" / "kidney.csv"
