"""Area between two Kaplan-Meier curves (ABS) and its permutation test.

Two code paths compute the same quantities:

* the scalar path (:func:`abs_measure`, :func:`null_moments`) walks the
  rectangles of two :class:`~abssurv.surv_core.StepCurve` objects and is the
  readable reference;
* :class:`_Batch` evaluates many relabelled or reweighted copies of one pooled
  dataset at once with array operations, which is what the permutation test,
  the bootstrap interval and the simulation study use.

Interval modes
--------------
``"clamped"`` (default)
    The integral of the step functions over exactly ``[t_star, t_dprime]``:
    boundary rectangles are cut at the endpoints, and the piece between
    ``t_star`` and the next grid time uses the curve values in force at
    ``t_star``. Adjacent intervals add up to the full-range area.
``"full_gap"``
    Only grid times with ``t_star < t_j < t_dprime`` contribute, each with its
    full gap ``t_{j+1} - t_j`` (the last gap ends at the follow-up end ``v``).

Both modes agree on the full range ``[0, v]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Optional, Union

import numpy as np
from scipy import stats

from .comparators import DegenerateStatisticError, TestResult
from .surv_core import (
    PooledGrid,
    Sample,
    StepCurve,
    SurvivalDataError,
    eval_surv,
    follow_up_end,
    km_estimate,
    pooled_grid,
)

MODES = ("clamped", "full_gap")
TWO_OVER_PI = 2.0 / math.pi

SeedLike = Union[None, int, np.random.SeedSequence, np.random.Generator]


class IntervalError(ValueError):
    pass


@dataclass(frozen=True)
class IntervalSpec:
    """Analysis window ``[t_star, t_dprime]``; ``t_dprime=None`` means up to ``v``."""

    t_star: float = 0.0
    t_dprime: Optional[float] = None
    mode: str = "clamped"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.t_star < 0 or (self.t_dprime is not None and self.t_dprime <= self.t_star):
            raise IntervalError("interval out of range")

    def bounds(self, v: float) -> tuple[float, float]:
        hi = v if self.t_dprime is None else self.t_dprime
        if not (0 <= self.t_star < hi <= v):
            raise IntervalError(
                f"interval out of range: [{self.t_star}, {hi}] not within [0, {v}]"
            )
        return float(self.t_star), float(hi)

    @property
    def is_full(self) -> bool:
        return self.t_star == 0 and self.t_dprime is None


FULL = IntervalSpec()


@dataclass
class AbsResult:
    abs_value: float
    e_null: float
    v_null: float
    delta: Optional[float]
    rho: float = 0.5
    v: float = float("nan")
    interval: tuple = ()
    mode: str = "clamped"


@dataclass
class PermutationResult:
    p_value: float
    n_resamples: int
    observed_delta: float
    resampled_deltas: np.ndarray
    seed: object
    exceedances: int
    n_degenerate: int = 0
    tie: str = "strict"
    observed: Optional[AbsResult] = None

    @property
    def p_label(self) -> str:
        if self.exceedances == 0:
            return f"< 1/{self.n_resamples}"
        return f"{self.p_value:.3f}"


# ---------------------------------------------------------------------------
# scalar path


def _segments(grid: PooledGrid, lo: float, hi: float, mode: str) -> list[tuple[float, float]]:
    """(start, width) of each rectangle; curve values are taken at ``start``."""
    g = grid.times
    if mode == "clamped":
        inner = [float(x) for x in g if lo < x < hi]
        starts = [lo] + inner
        ends = inner + [hi]
        return [(a, b - a) for a, b in zip(starts, ends)]
    out = []
    for j, x in enumerate(g):
        if lo < x < hi:
            nxt = float(g[j + 1]) if j + 1 < g.size else grid.v
            out.append((float(x), min(nxt, grid.v) - float(x)))
    return out


def abs_measure(
    curve1: StepCurve, curve2: StepCurve, grid: PooledGrid, interval: IntervalSpec = FULL
) -> float:
    lo, hi = interval.bounds(grid.v)
    total = 0.0
    for start, width in _segments(grid, lo, hi, interval.mode):
        s1, _ = eval_surv(curve1, start)
        s2, _ = eval_surv(curve2, start)
        total += abs(s1 - s2) * width
    return total


def _combine_moments(sd_width: np.ndarray, rho: float, axis=-1):
    """Null mean and variance from the per-rectangle terms sqrt(var1 + var2) * width.

    The double sum over pairs j < j' with a common correlation ``rho`` equals
    ``rho * ((sum a)^2 - sum a^2)``.
    """
    s = np.sum(sd_width, axis=axis)
    sq = np.sum(sd_width * sd_width, axis=axis)
    e_null = math.sqrt(TWO_OVER_PI) * s
    v_null = (1.0 - TWO_OVER_PI) * ((1.0 - rho) * sq + rho * s * s)
    return e_null, v_null


def null_moments(
    curve1: StepCurve,
    curve2: StepCurve,
    grid: PooledGrid,
    interval: IntervalSpec = FULL,
    rho: float = 0.5,
) -> tuple[float, float]:
    """Mean and variance of the ABS under equal survival, normal approximation."""
    if not 0.0 <= rho <= 1.0:
        raise ValueError("rho must lie in [0, 1]")
    lo, hi = interval.bounds(grid.v)
    terms = []
    for start, width in _segments(grid, lo, hi, interval.mode):
        _, var1 = eval_surv(curve1, start)
        _, var2 = eval_surv(curve2, start)
        terms.append(math.sqrt(var1 + var2) * width)
    e_null, v_null = _combine_moments(np.asarray(terms, dtype=float), rho)
    if not v_null > 0:
        raise DegenerateStatisticError("degenerate null variance")
    return float(e_null), float(v_null)


def delta_statistic(abs_value: float, e_null: float, v_null: float) -> float:
    if not v_null > 0:
        raise DegenerateStatisticError("degenerate null variance")
    return (abs_value - e_null) / math.sqrt(v_null)


def abs_statistic(
    sample1: Sample,
    sample2: Sample,
    interval: IntervalSpec = FULL,
    rho: float = 0.5,
    rule: str = "formula",
) -> AbsResult:
    """ABS, its null moments and the standardized statistic for two arms."""
    grid = pooled_grid(sample1, sample2, rule)
    c1, c2 = km_estimate(sample1), km_estimate(sample2)
    value = abs_measure(c1, c2, grid, interval)
    e_null, v_null = null_moments(c1, c2, grid, interval, rho)
    return AbsResult(
        abs_value=value,
        e_null=e_null,
        v_null=v_null,
        delta=delta_statistic(value, e_null, v_null),
        rho=rho,
        v=grid.v,
        interval=interval.bounds(grid.v),
        mode=interval.mode,
    )


def abs_normal_test(
    sample1: Sample,
    sample2: Sample,
    interval: IntervalSpec = FULL,
    rho: float = 0.5,
    rule: str = "formula",
) -> TestResult:
    """Two-sided test of the standardized ABS against a standard normal."""
    res = abs_statistic(sample1, sample2, interval, rho, rule)
    return TestResult(
        name="abs_normal",
        statistic=res.delta,
        p_value=float(2.0 * stats.norm.sf(abs(res.delta))),
        estimate=res.abs_value,
        extras={"e_null": res.e_null, "v_null": res.v_null, "v": res.v, "rho": rho},
    )


# ---------------------------------------------------------------------------
# batch path


class _Batch:
    """Pooled observations of two arms, evaluated under many group assignments.

    Rows of the count matrices ``c1``/``c2`` give how many copies of each
    pooled observation belong to arm 1/arm 2. A permutation is a 0/1 row with
    ``c2 = 1 - c1``; a bootstrap draw is a row of multiplicities.
    """

    def __init__(self, sample1: Sample, sample2: Sample, rule: str = "formula"):
        times = np.concatenate([sample1.times, sample2.times])
        status = np.concatenate([sample1.status, sample2.status])
        labels = np.concatenate([np.ones(sample1.n), np.zeros(sample2.n)])
        order = np.lexsort((-status, times))
        self.times = times[order]
        self.status = status[order]
        self.labels = labels[order]
        self.n1, self.n2 = sample1.n, sample2.n
        self.rule = rule
        self.is_event = self.status == 1
        _, self.block_starts = np.unique(self.times, return_index=True)
        distinct = self.times[self.block_starts]
        self.grid = np.unique(self.times[self.is_event])
        if self.grid.size == 0:
            raise SurvivalDataError("no events")
        self.grid_cols = np.searchsorted(distinct, self.grid)

    def _curves(self, counts: np.ndarray):
        n_at = np.add.reduceat(counts, self.block_starts, axis=1)
        d_at = np.add.reduceat(counts * self.is_event, self.block_starts, axis=1)
        at_risk = np.cumsum(n_at[:, ::-1], axis=1)[:, ::-1][:, self.grid_cols]
        deaths = d_at[:, self.grid_cols]
        with np.errstate(divide="ignore", invalid="ignore"):
            factor = np.where(at_risk > 0, 1.0 - deaths / at_risk, 1.0)
            gw = np.where(at_risk > deaths, deaths / (at_risk * (at_risk - deaths)), 0.0)
        surv = np.cumprod(factor, axis=1)
        # surv is exactly 0 once a curve is absorbed, which zeroes its variance
        var = surv * surv * np.cumsum(gw, axis=1)
        return surv, var

    def _last(self, counts: np.ndarray):
        present = counts > 0
        pos = self.times.size - 1 - np.argmax(present[:, ::-1], axis=1)
        return self.times[pos], self.status[pos]

    def follow_up_end(self, c1: np.ndarray, c2: np.ndarray) -> np.ndarray:
        t1, d1 = self._last(c1)
        t2, d2 = self._last(c2)
        if self.rule == "formula":
            mixed = np.maximum(t1 * (1 - d1), t2 * (1 - d2))
        else:
            mixed = np.maximum(t1 * d1, t2 * d2)
        return np.where(
            (d1 == 0) & (d2 == 0),
            np.minimum(t1, t2),
            np.where((d1 == 1) & (d2 == 1), np.maximum(t1, t2), mixed),
        )

    def evaluate(
        self,
        c1: np.ndarray,
        c2: np.ndarray,
        t_star: float,
        t_dprime: Optional[float],
        mode: str,
        rho: float,
    ):
        """ABS, null mean, null variance and follow-up end for every row.

        The right endpoint is cut back to each row's own follow-up end.
        """
        c1 = np.asarray(c1, dtype=float)
        c2 = np.asarray(c2, dtype=float)
        s1, v1 = self._curves(c1)
        s2, v2 = self._curves(c2)
        v_end = self.follow_up_end(c1, c2)
        hi = v_end if t_dprime is None else np.minimum(t_dprime, v_end)
        g = self.grid
        hi_col = hi[:, None]
        if mode == "clamped":
            # rectangle j starts at the j-th grid time; j = 0 is [0, g_1) with S = 1
            ones = np.ones((c1.shape[0], 1))
            zeros = np.zeros((c1.shape[0], 1))
            s1 = np.hstack([ones, s1])
            s2 = np.hstack([ones, s2])
            v1 = np.hstack([zeros, v1])
            v2 = np.hstack([zeros, v2])
            left = np.maximum(np.concatenate([[0.0], g]), t_star)
            right = np.minimum(np.concatenate([g, [np.inf]])[None, :], hi_col)
            width = np.clip(right - left[None, :], 0.0, None)
        else:
            nxt = np.minimum(np.concatenate([g[1:], [np.inf]])[None, :], v_end[:, None])
            keep = (g[None, :] > t_star) & (g[None, :] < hi_col)
            width = np.where(keep, nxt - g[None, :], 0.0)
        abs_value = np.sum(np.abs(s1 - s2) * width, axis=1)
        e_null, v_null = _combine_moments(np.sqrt(v1 + v2) * width, rho, axis=1)
        return abs_value, e_null, v_null, v_end

    def deltas(self, c1, c2, t_star, t_dprime, mode, rho):
        abs_value, e_null, v_null, _ = self.evaluate(c1, c2, t_star, t_dprime, mode, rho)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(v_null > 0, (abs_value - e_null) / np.sqrt(v_null), np.nan)
        return out


def _rng(seed: SeedLike) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(seed))


_CHUNK = 512


def _label_rows(batch: _Batch, n: int, rng: np.random.Generator) -> Iterator[np.ndarray]:
    """Permuted copies of the pooled arm-1 indicator, ``_CHUNK`` rows at a time."""
    done = 0
    while done < n:
        k = min(_CHUNK, n - done)
        idx = rng.permuted(np.tile(np.arange(batch.labels.size), (k, 1)), axis=1)
        yield batch.labels[idx]
        done += k


def permutation_test(
    sample1: Sample,
    sample2: Sample,
    interval: IntervalSpec = FULL,
    n_resamples: int = 1000,
    seed: SeedLike = None,
    rho: float = 0.5,
    tie: str = "strict",
    rule: str = "formula",
) -> PermutationResult:
    """Permutation P value of the standardized ABS (ABSP; ABSPi on a sub-interval).

    Each resample relabels the pooled observations at random (group sizes
    kept), rebuilds both curves, the follow-up end and the null moments, and
    recomputes the statistic. ``P = #{|delta_n| > |delta|} / n_resamples``
    (``tie="weak"`` counts ``>=``). Resamples whose null variance vanishes get
    statistic 0 and are counted in ``n_degenerate``.
    """
    if n_resamples < 1:
        raise ValueError("n_resamples must be >= 1")
    if tie not in ("strict", "weak"):
        raise ValueError("tie must be 'strict' or 'weak'")
    pooled_t = np.concatenate([sample1.times, sample2.times])
    pooled_s = np.concatenate([sample1.status, sample2.status])
    if np.unique(np.stack([pooled_t, pooled_s]), axis=1).shape[1] < 2:
        raise SurvivalDataError("cannot permute")
    observed = abs_statistic(sample1, sample2, interval, rho, rule)
    batch = _Batch(sample1, sample2, rule)
    lo = interval.t_star
    hi = interval.t_dprime
    obs = batch.deltas(batch.labels[None, :], 1.0 - batch.labels[None, :], lo, hi, interval.mode, rho)[0]

    rng = _rng(seed)
    chunks = []
    for rows in _label_rows(batch, n_resamples, rng):
        chunks.append(batch.deltas(rows, 1.0 - rows, lo, hi, interval.mode, rho))
    deltas = np.concatenate(chunks)
    degenerate = np.isnan(deltas)
    deltas[degenerate] = 0.0
    if tie == "strict":
        exceed = np.abs(deltas) > abs(obs)
    else:
        exceed = np.abs(deltas) >= abs(obs)
    exceed &= ~degenerate
    count = int(exceed.sum())
    return PermutationResult(
        p_value=count / n_resamples,
        n_resamples=n_resamples,
        observed_delta=float(obs),
        resampled_deltas=deltas,
        seed=seed,
        exceedances=count,
        n_degenerate=int(degenerate.sum()),
        tie=tie,
        observed=observed,
    )


def permutation_resamples(
    sample1: Sample, sample2: Sample, n_resamples: int, seed: SeedLike = None
) -> Iterator[tuple[Sample, Sample]]:
    """The relabelled datasets :func:`permutation_test` uses for the same seed."""
    batch = _Batch(sample1, sample2)
    for rows in _label_rows(batch, n_resamples, _rng(seed)):
        for row in rows:
            one = row == 1
            yield (
                Sample(batch.times[one], batch.status[one]),
                Sample(batch.times[~one], batch.status[~one]),
            )


def abs_confidence_interval(
    sample1: Sample,
    sample2: Sample,
    interval: IntervalSpec = FULL,
    level: float = 0.95,
    n_boot: int = 1000,
    seed: SeedLike = None,
    rule: str = "formula",
) -> tuple[float, float]:
    """Percentile interval of the ABS from a bootstrap stratified by arm."""
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    if n_boot < 10:
        raise ValueError("n_boot must be >= 10")
    batch = _Batch(sample1, sample2, rule)
    rng = _rng(seed)
    idx1 = np.nonzero(batch.labels == 1)[0]
    idx2 = np.nonzero(batch.labels == 0)[0]
    values = []
    done = 0
    while done < n_boot:
        k = min(_CHUNK, n_boot - done)
        c1 = np.zeros((k, batch.labels.size))
        c2 = np.zeros((k, batch.labels.size))
        rows = np.arange(k)[:, None]
        np.add.at(c1, (rows, idx1[rng.integers(0, idx1.size, (k, idx1.size))]), 1.0)
        np.add.at(c2, (rows, idx2[rng.integers(0, idx2.size, (k, idx2.size))]), 1.0)
        abs_value, _, _, _ = batch.evaluate(c1, c2, interval.t_star, interval.t_dprime, interval.mode, 0.5)
        values.append(abs_value)
        done += k
    values = np.concatenate(values)
    lo, hi = np.quantile(values, [(1.0 - level) / 2.0, (1.0 + level) / 2.0])
    return float(lo), float(hi)


# ---------------------------------------------------------------------------
# null distribution of the standardized statistic


@dataclass
class NullDiagnostic:
    deltas: np.ndarray
    skewness: float
    excess_kurtosis: float
    unstable: bool = False
    n_degenerate: int = 0
    seed: object = None

    def histogram(self, bins: int = 30) -> tuple[np.ndarray, np.ndarray]:
        """(left edges, counts) of ``bins`` equal-width bins over the observed range."""
        counts, edges = np.histogram(self.deltas, bins=bins)
        return edges[:-1], counts


def null_delta_diagnostic(scenario, n_draws: int = 1000, seed: int = 0) -> NullDiagnostic:
    """Simulate the statistic under a null scenario and summarize its shape.

    Draw ``i`` uses the stream keyed by ``(seed, i)``. Fewer than 8 usable
    draws give NaN moments with ``unstable=True``.
    """
    from .sim_harness import generate_dataset, scenario_censoring

    if not scenario.is_null:
        raise ValueError(f"scenario {scenario.id} is not a null scenario")
    bounds = scenario_censoring(scenario)
    deltas = []
    degenerate = 0
    for i in range(n_draws):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(i,))))
        s1, s2 = generate_dataset(scenario, rng, censor_bounds=bounds)
        try:
            deltas.append(abs_statistic(s1, s2).delta)
        except (DegenerateStatisticError, SurvivalDataError, IntervalError):
            degenerate += 1
    arr = np.asarray(deltas, dtype=float)
    if arr.size < 8:
        return NullDiagnostic(arr, float("nan"), float("nan"), True, degenerate, seed)
    return NullDiagnostic(
        deltas=arr,
        skewness=float(stats.skew(arr, bias=False)),
        excess_kurtosis=float(stats.kurtosis(arr, fisher=True, bias=False)),
        unstable=False,
        n_degenerate=degenerate,
        seed=seed,
    )


def curve_table(sample1: Sample, sample2: Sample, rule: str = "formula") -> list[tuple[float, float, float, float]]:
    """Rows ``(t, S1, S2, |S1 - S2|)`` at 0 and every pooled event time before ``v``."""
    grid = pooled_grid(sample1, sample2, rule)
    c1, c2 = km_estimate(sample1), km_estimate(sample2)
    rows = []
    for t in np.concatenate([[0.0], grid.times[grid.times < grid.v], [grid.v]]):
        s1, _ = eval_surv(c1, t)
        s2, _ = eval_surv(c2, t)
        rows.append((float(t), s1, s2, abs(s1 - s2)))
    return rows
