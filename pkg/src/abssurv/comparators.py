"""Standard two-arm comparisons: log-rank, Cox hazard ratio, RMST difference."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import stats

from .surv_core import Sample, StepCurve, SurvivalDataError, follow_up_end, km_estimate


class DegenerateStatisticError(ArithmeticError):
    """A test statistic has zero variance or no finite estimate."""


@dataclass
class TestResult:
    name: str
    statistic: float
    p_value: float
    estimate: Optional[float] = None
    ci_lo: Optional[float] = None
    ci_hi: Optional[float] = None
    extras: dict = field(default_factory=dict)

    __test__ = False  # not a pytest class


def _risk_table(sample1: Sample, sample2: Sample):
    """At-risk and event counts per arm at the pooled distinct event times."""
    t1, s1, t2, s2 = sample1.times, sample1.status, sample2.times, sample2.status
    grid = np.union1d(t1[s1 == 1], t2[s2 == 1])
    y1 = t1.size - np.searchsorted(t1, grid, side="left")
    y2 = t2.size - np.searchsorted(t2, grid, side="left")
    ev1 = np.sort(t1[s1 == 1])
    ev2 = np.sort(t2[s2 == 1])
    d1 = np.searchsorted(ev1, grid, side="right") - np.searchsorted(ev1, grid, side="left")
    d2 = np.searchsorted(ev2, grid, side="right") - np.searchsorted(ev2, grid, side="left")
    return grid, y1.astype(float), y2.astype(float), d1.astype(float), d2.astype(float)


def logrank_test(sample1: Sample, sample2: Sample) -> TestResult:
    grid, y1, y2, d1, d2 = _risk_table(sample1, sample2)
    if grid.size == 0:
        raise SurvivalDataError("no events")
    y = y1 + y2
    d = d1 + d2
    expected = y1 * d / y
    keep = y > 1
    v = np.sum(y1[keep] * y2[keep] * d[keep] * (y[keep] - d[keep]) / (y[keep] ** 2 * (y[keep] - 1)))
    o_minus_e = float(np.sum((d1 - expected)[keep]))
    if not v > 0:
        raise DegenerateStatisticError("degenerate log-rank variance")
    chi2 = o_minus_e**2 / v
    return TestResult(
        name="logrank",
        statistic=float(chi2),
        p_value=float(stats.chi2.sf(chi2, 1)),
        extras={"O": float(d1[keep].sum()), "E": float(expected[keep].sum()), "V": float(v)},
    )


def _cox_terms(beta, y1, y2, d1, d2, ties):
    """Log partial likelihood, score and information for one binary covariate."""
    eb = math.exp(beta)
    loglik = float(np.sum(d1) * beta)
    score = float(np.sum(d1))
    info = 0.0
    for a1, a2, e1, e2 in zip(y1, y2, d1, d2):
        dd = int(e1 + e2)
        if dd == 0:
            continue
        for k in range(dd):
            frac = k / dd if ties == "efron" else 0.0
            denom = a2 + a1 * eb - frac * (e2 + e1 * eb)
            num = a1 * eb - frac * e1 * eb
            loglik -= math.log(denom)
            score -= num / denom
            info += num / denom - (num / denom) ** 2
    return loglik, score, info


def hazard_ratio(
    sample1: Sample,
    sample2: Sample,
    level: float = 0.95,
    ties: str = "efron",
    tol: float = 1e-10,
    max_iter: int = 50,
) -> TestResult:
    """Hazard of ``sample1`` relative to ``sample2`` from a one-covariate Cox model.

    Newton-Raphson from beta = 0 with step halving; Wald interval and P.
    ``ties`` selects the Efron (default) or Breslow partial likelihood.
    """
    if ties not in ("efron", "breslow"):
        raise ValueError(f"unknown ties method {ties!r}")
    grid, y1, y2, d1, d2 = _risk_table(sample1, sample2)
    if grid.size == 0:
        raise SurvivalDataError("no events")
    if d1.sum() == 0 or d2.sum() == 0:
        raise DegenerateStatisticError("HR diverges")

    beta = 0.0
    loglik, score, info = _cox_terms(beta, y1, y2, d1, d2, ties)
    n_iter = 0
    while n_iter < max_iter:
        if info <= 0:
            raise DegenerateStatisticError("HR diverges")
        step = score / info
        # one extra Newton step past the score tolerance costs little and pins beta to rounding level
        if abs(score) < tol and abs(step) < 1e-13:
            break
        n_iter += 1
        new = _cox_terms(beta + step, y1, y2, d1, d2, ties)
        halvings = 0
        slack = 1e-12 * (1.0 + abs(loglik))  # ignore rounding-level decreases near the optimum
        while new[0] < loglik - slack and halvings < 30:
            step /= 2.0
            halvings += 1
            new = _cox_terms(beta + step, y1, y2, d1, d2, ties)
        beta += step
        loglik, score, info = new
    if abs(score) >= 1e-6 or not math.isfinite(beta) or abs(beta) > 30:
        raise DegenerateStatisticError("HR diverges")

    se = 1.0 / math.sqrt(info)
    z = float(stats.norm.ppf(0.5 + level / 2.0))
    wald = beta / se
    return TestResult(
        name="hazard_ratio",
        statistic=float(wald),
        p_value=float(2.0 * stats.norm.sf(abs(wald))),
        estimate=math.exp(beta),
        ci_lo=math.exp(beta - z * se),
        ci_hi=math.exp(beta + z * se),
        extras={"beta": float(beta), "se": se, "iterations": n_iter, "ties": ties, "level": level},
    )


def _area_under(curve: StepCurve, lo: float, hi: float) -> float:
    """Integral of the KM step function over [lo, hi]."""
    if hi <= lo:
        return 0.0
    cuts = curve.grid[(curve.grid > lo) & (curve.grid < hi)]
    edges = np.concatenate(([lo], cuts, [hi]))
    j = np.searchsorted(curve.grid, edges[:-1], side="right")
    values = np.concatenate(([1.0], curve.surv))[j]
    return float(np.sum(values * np.diff(edges)))


def rmst(curve: StepCurve, tau: float) -> tuple[float, float]:
    """Restricted mean survival time up to ``tau`` and its variance.

    Past the last observation the curve is only known if that observation
    was an event (the curve is then 0).
    """
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    if tau > curve.max_time and not curve.last_is_event:
        raise SurvivalDataError("tau beyond follow-up")
    estimate = _area_under(curve, 0.0, tau)
    variance = 0.0
    for g, y, d in zip(curve.grid, curve.n_at_risk, curve.n_events):
        if g >= tau:
            break
        if y > d:
            tail = _area_under(curve, float(g), tau)
            variance += tail * tail * d / (y * (y - d))
    return estimate, variance


def rmst_difference_test(
    sample1: Sample,
    sample2: Sample,
    tau: Optional[float] = None,
    level: float = 0.95,
    rule: str = "formula",
) -> TestResult:
    """RMST of ``sample1`` minus RMST of ``sample2``; ``tau`` defaults to the follow-up end."""
    if tau is None:
        tau = follow_up_end(sample1, sample2, rule)
    r1, v1 = rmst(km_estimate(sample1), tau)
    r2, v2 = rmst(km_estimate(sample2), tau)
    diff = r1 - r2
    se = math.sqrt(v1 + v2)
    if se == 0:
        if diff == 0:
            z, p = 0.0, 1.0
        else:
            raise DegenerateStatisticError("degenerate RMST variance")
    else:
        z = diff / se
        p = float(2.0 * stats.norm.sf(abs(z)))
    q = float(stats.norm.ppf(0.5 + level / 2.0))
    return TestResult(
        name="rmstd",
        statistic=float(z),
        p_value=p,
        estimate=diff,
        ci_lo=diff - q * se,
        ci_hi=diff + q * se,
        extras={"tau": tau, "rmst1": r1, "rmst2": r2, "se": se, "level": level},
    )
