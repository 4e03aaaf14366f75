"""Kaplan-Meier curves, Greenwood variances and the shared follow-up end.

Everything here operates on a single arm (:class:`Sample`) or on a pair of
arms. Values are immutable once built.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np


class SurvivalDataError(ValueError):
    """Raised for malformed survival input (empty arms, bad times, ...)."""


@dataclass(frozen=True)
class Observation:
    time: float
    status: int

    def __post_init__(self):
        if not math.isfinite(self.time) or self.time < 0:
            raise SurvivalDataError(f"invalid time: {self.time!r}")
        if self.status not in (0, 1):
            raise SurvivalDataError(f"invalid status: {self.status!r}")


class Sample:
    """One arm of a two-arm study.

    Observations are stored sorted by time; at equal times events come
    before censorings, so the last observation is censored whenever any
    censoring shares the largest time.
    """

    __slots__ = ("times", "status")

    def __init__(self, times: Iterable[float], status: Iterable[int]):
        t = np.array(times, dtype=float)
        s = np.array(status)
        if t.ndim != 1 or t.shape != s.shape:
            raise SurvivalDataError("times and status must be 1-d and of equal length")
        if t.size == 0:
            raise SurvivalDataError("empty sample")
        if not np.all(np.isfinite(t)) or np.any(t < 0):
            raise SurvivalDataError("invalid time")
        if not np.all((s == 0) | (s == 1)):
            raise SurvivalDataError("invalid status")
        s = s.astype(np.int64)
        order = np.lexsort((-s, t))
        t, s = t[order], s[order]
        t.setflags(write=False)
        s.setflags(write=False)
        self.times = t
        self.status = s

    @classmethod
    def from_observations(cls, observations: Sequence[Observation]) -> "Sample":
        return cls([o.time for o in observations], [o.status for o in observations])

    @property
    def observations(self) -> list[Observation]:
        return [Observation(float(t), int(s)) for t, s in zip(self.times, self.status)]

    @property
    def n(self) -> int:
        return int(self.times.size)

    @property
    def n_events(self) -> int:
        return int(self.status.sum())

    @property
    def last_time(self) -> float:
        return float(self.times[-1])

    @property
    def last_status(self) -> int:
        return int(self.status[-1])

    def scaled(self, c: float) -> "Sample":
        return Sample(self.times * c, self.status)

    def __len__(self):
        return self.n

    def __repr__(self):
        return f"Sample(n={self.n}, events={self.n_events})"

    def __eq__(self, other):
        if not isinstance(other, Sample):
            return NotImplemented
        return np.array_equal(self.times, other.times) and np.array_equal(self.status, other.status)

    def __hash__(self):
        return hash((self.times.tobytes(), self.status.tobytes()))


@dataclass(frozen=True, eq=False)
class StepCurve:
    """Right-continuous KM step function on one arm's distinct event times."""

    grid: np.ndarray
    surv: np.ndarray
    var: np.ndarray
    n_at_risk: np.ndarray
    n_events: np.ndarray
    max_time: float
    last_is_event: bool
    absorbed: bool = False

    def __call__(self, t: float) -> tuple[float, float]:
        return eval_surv(self, t)


@dataclass(frozen=True, eq=False)
class PooledGrid:
    times: np.ndarray
    v: float


def km_estimate(sample: Sample) -> StepCurve:
    """Product-limit estimate with Greenwood variance.

    When the curve reaches zero (every subject at risk fails), the Greenwood
    sum is undefined there; the variance is stored as 0 from that point on
    and ``absorbed`` is set.
    """
    if not isinstance(sample, Sample):
        sample = Sample(*sample)
    t, s = sample.times, sample.status
    grid = np.unique(t[s == 1])
    # subjects with time >= g are at risk at g
    at_risk = t.size - np.searchsorted(t, grid, side="left")
    events = np.array([int(np.count_nonzero((t == g) & (s == 1))) for g in grid], dtype=np.int64)

    surv = np.empty(grid.size)
    var = np.empty(grid.size)
    running_s = 1.0
    greenwood = 0.0
    absorbed = False
    for j, (y, d) in enumerate(zip(at_risk, events)):
        running_s *= 1.0 - d / y
        if y > d:
            greenwood += d / (y * (y - d))
        else:
            absorbed = True
        surv[j] = running_s
        var[j] = 0.0 if absorbed else running_s * running_s * greenwood
    for arr in (grid, surv, var, at_risk, events):
        arr.setflags(write=False)
    return StepCurve(
        grid=grid,
        surv=surv,
        var=var,
        n_at_risk=at_risk.astype(np.int64),
        n_events=events,
        max_time=sample.last_time,
        last_is_event=bool(sample.last_status),
        absorbed=absorbed,
    )


def eval_surv(curve: StepCurve, t: float) -> tuple[float, float]:
    """Survival and Greenwood variance in force at ``t`` (post-jump at grid times)."""
    j = int(np.searchsorted(curve.grid, t, side="right")) - 1
    if j < 0:
        return 1.0, 0.0
    return float(curve.surv[j]), float(curve.var[j])


def follow_up_end(sample1: Sample, sample2: Sample, rule: str = "formula") -> float:
    """Last time at which both arms' areas are computable.

    Both last observations censored: the smaller last time. Both events: the
    larger. Mixed: with ``rule="formula"`` the literal
    ``max[t1 (1 - d1), t2 (1 - d2)]``, i.e. the censored arm's last time;
    ``rule="event_time"`` instead returns the event-ended arm's last time.
    """
    t1, d1 = sample1.last_time, sample1.last_status
    t2, d2 = sample2.last_time, sample2.last_status
    if d1 == 0 and d2 == 0:
        return min(t1, t2)
    if d1 == 1 and d2 == 1:
        return max(t1, t2)
    if rule == "formula":
        return max(t1 * (1 - d1), t2 * (1 - d2))
    if rule == "event_time":
        return max(t1 * d1, t2 * d2)
    raise ValueError(f"unknown follow-up rule {rule!r}")


def pooled_grid(sample1: Sample, sample2: Sample, rule: str = "formula") -> PooledGrid:
    times = np.union1d(sample1.times[sample1.status == 1], sample2.times[sample2.status == 1])
    if times.size == 0:
        raise SurvivalDataError("no events")
    times.setflags(write=False)
    return PooledGrid(times=times, v=follow_up_end(sample1, sample2, rule))


def median_survival(curve: StepCurve) -> Optional[float]:
    hit = np.nonzero(curve.surv <= 0.5)[0]
    if hit.size == 0:
        return None
    return float(curve.grid[hit[0]])
