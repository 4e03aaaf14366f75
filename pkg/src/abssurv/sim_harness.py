"""Monte Carlo study of type I error and power for the two-arm tests.

Lifetimes come from piecewise-exponential or Weibull laws; each arm is
censored by its own ``U(0, a)`` with ``a`` solved so that the arm's expected
censoring fraction hits the target. Random streams are keyed by
``(seed, cell key, iteration)`` through :class:`numpy.random.SeedSequence`,
so any single cell or iteration can be replayed on its own and iterations
can run in any order or in parallel.
"""

from __future__ import annotations

import math
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from itertools import product
from typing import Optional, Sequence

import numpy as np
from scipy import optimize, special

from .abs_engine import FULL, IntervalError, abs_normal_test, permutation_test
from .comparators import DegenerateStatisticError, logrank_test, rmst_difference_test
from .surv_core import Sample, SurvivalDataError

TESTS = ("logrank", "rmstd", "abs_normal", "absp")
TEST_LABELS = {"logrank": "Log-rank", "rmstd": "RMSTd", "abs_normal": "ABS", "absp": "ABSP"}
SIZE_PAIRS = ((20, 20), (50, 50), (100, 100), (20, 50), (50, 100))
CENSOR_RATES = (0.0, 0.15, 0.30, 0.45)
PRESETS = {"full": (1000, 1000), "desk": (500, 500)}


@dataclass(frozen=True)
class HazardSpec:
    """Piecewise-constant hazard or Weibull law.

    For ``kind="piecewise_exponential"``, ``breaks`` are the finite upper
    bounds of all but the last segment and ``rates`` has one more entry.
    For ``kind="weibull"``, S(t) = exp(-(t / scale) ** shape).
    """

    kind: str
    rates: tuple = ()
    breaks: tuple = ()
    shape: float = 1.0
    scale: float = 1.0

    def __post_init__(self):
        if self.kind == "piecewise_exponential":
            if len(self.rates) != len(self.breaks) + 1:
                raise ValueError("need exactly one more rate than breakpoints")
            if any(r <= 0 for r in self.rates):
                raise ValueError("rates must be positive")
            if any(b <= 0 for b in self.breaks) or any(
                b2 <= b1 for b1, b2 in zip(self.breaks, self.breaks[1:])
            ):
                raise ValueError("breakpoints must be positive and strictly increasing")
        elif self.kind == "weibull":
            if self.shape <= 0 or self.scale <= 0:
                raise ValueError("weibull parameters must be positive")
        else:
            raise ValueError(f"unknown hazard kind {self.kind!r}")

    @classmethod
    def exponential(cls, rate: float) -> "HazardSpec":
        return cls("piecewise_exponential", rates=(rate,))

    @classmethod
    def piecewise(cls, rates: Sequence[float], breaks: Sequence[float]) -> "HazardSpec":
        return cls("piecewise_exponential", rates=tuple(rates), breaks=tuple(breaks))

    @classmethod
    def weibull(cls, shape: float, scale: float) -> "HazardSpec":
        return cls("weibull", shape=shape, scale=scale)

    def _bounds(self):
        lower = np.concatenate([[0.0], self.breaks])
        rates = np.asarray(self.rates, dtype=float)
        widths = np.diff(lower)
        h_lower = np.concatenate([[0.0], np.cumsum(rates[:-1] * widths)])
        return lower, rates, h_lower

    def cumulative_hazard(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "weibull":
            return (t / self.scale) ** self.shape
        lower, rates, h_lower = self._bounds()
        k = np.searchsorted(lower, t, side="right") - 1
        return h_lower[k] + rates[k] * (t - lower[k])

    def survival(self, t):
        return np.exp(-self.cumulative_hazard(t))

    def inverse_cumulative_hazard(self, h):
        """Time at which the cumulative hazard reaches ``h``."""
        h = np.asarray(h, dtype=float)
        if self.kind == "weibull":
            return self.scale * h ** (1.0 / self.shape)
        lower, rates, h_lower = self._bounds()
        k = np.searchsorted(h_lower, h, side="right") - 1
        return lower[k] + (h - h_lower[k]) / rates[k]

    def mean_survival(self, a: float) -> float:
        """Average of S over [0, a], i.e. P(C < X) for C ~ U(0, a)."""
        if a <= 0:
            return 1.0
        if self.kind == "weibull":
            x = (a / self.scale) ** self.shape
            inv = 1.0 / self.shape
            area = self.scale * inv * special.gamma(inv) * special.gammainc(inv, x)
            return float(area / a)
        lower, rates, h_lower = self._bounds()
        upper = np.concatenate([lower[1:], [np.inf]])
        area = 0.0
        for lo, hi, r, h0 in zip(lower, upper, rates, h_lower):
            if lo >= a:
                break
            end = min(hi, a)
            area += math.exp(-h0) * (-math.expm1(-r * (end - lo))) / r
        return area / a


def lifetime_from_uniform(hazard: HazardSpec, u):
    """Inverse transform: the t solving H(t) = -log u, for u in (0, 1]."""
    return hazard.inverse_cumulative_hazard(-np.log(u))


def sample_lifetime(hazard: HazardSpec, rng: np.random.Generator, size=None):
    u = 1.0 - rng.random(size)
    t = lifetime_from_uniform(hazard, u)
    return float(t) if size is None else t


def calibrate_censoring(hazard: HazardSpec, target: float) -> float:
    """Upper limit ``a`` of U(0, a) censoring giving expected censoring ``target``.

    Returns ``inf`` (no censoring) for a target of 0.
    """
    if not 0.0 <= target < 1.0:
        raise ValueError("censoring target must lie in [0, 1)")
    if target == 0.0:
        return math.inf
    f = lambda a: hazard.mean_survival(a) - target
    hi = 1.0
    while f(hi) > 0:
        hi *= 2.0
    lo = hi / 2.0
    while f(lo) < 0 and lo > 1e-12:
        lo /= 2.0
    return float(optimize.brentq(f, lo, hi, xtol=1e-12, rtol=1e-12))


SITUATIONS = {
    "I": (HazardSpec.exponential(0.25), HazardSpec.exponential(0.25)),
    "II": (HazardSpec.exponential(0.5), HazardSpec.exponential(0.2)),
    "III": (
        HazardSpec.piecewise((1.2, 0.1, 0.5, 1.0), (0.8, 1.8, 2.6)),
        HazardSpec.piecewise((0.5, 0.1, 1.2, 1.0), (0.8, 1.8, 2.6)),
    ),
    "IV": (HazardSpec.piecewise((1.0, 2.5), (0.8,)), HazardSpec.piecewise((1.0, 0.5), (0.8,))),
    "V": (HazardSpec.exponential(1 / 12), HazardSpec.piecewise((1 / 4, 1 / 35), (2.0,))),
    "VI": (HazardSpec.weibull(1.5, 5.0), HazardSpec.piecewise((0.5, 0.1), (1.5,))),
}
SITUATION_IDS = tuple(SITUATIONS)


@dataclass(frozen=True)
class ScenarioSpec:
    id: str
    hazard1: HazardSpec
    hazard2: HazardSpec
    n1: int = 50
    n2: int = 50
    censor_target: float = 0.0
    alpha: float = 0.05
    iterations: int = 1000
    permutations: int = 1000

    @classmethod
    def situation(cls, sid: str, n1: int = 50, n2: int = 50, censor_target: float = 0.0, **kw) -> "ScenarioSpec":
        if sid not in SITUATIONS:
            raise KeyError(f"unknown scenario {sid!r}; valid ids: {', '.join(SITUATION_IDS)}")
        h1, h2 = SITUATIONS[sid]
        return cls(sid, h1, h2, n1, n2, censor_target, **kw)

    @property
    def is_null(self) -> bool:
        return self.hazard1 == self.hazard2

    @property
    def cell_key(self) -> tuple[int, ...]:
        """Stable integer key used to derive this cell's random streams."""
        return (zlib.crc32(self.id.encode()), self.n1, self.n2, int(round(self.censor_target * 10000)))


def scenario_censoring(scenario: ScenarioSpec) -> tuple[float, float]:
    return (
        calibrate_censoring(scenario.hazard1, scenario.censor_target),
        calibrate_censoring(scenario.hazard2, scenario.censor_target),
    )


def _arm(hazard: HazardSpec, n: int, a: float, rng: np.random.Generator) -> Sample:
    x = sample_lifetime(hazard, rng, n)
    if math.isinf(a):
        return Sample(x, np.ones(n, dtype=int))
    c = rng.uniform(0.0, a, n)
    return Sample(np.minimum(x, c), (x <= c).astype(int))


def generate_dataset(
    scenario: ScenarioSpec,
    rng: np.random.Generator,
    censor_bounds: Optional[tuple[float, float]] = None,
) -> tuple[Sample, Sample]:
    """T = min(X, C), status = I[X <= C], one draw of both arms."""
    a, b = censor_bounds if censor_bounds is not None else scenario_censoring(scenario)
    return _arm(scenario.hazard1, scenario.n1, a, rng), _arm(scenario.hazard2, scenario.n2, b, rng)


def iteration_rng(seed: int, cell_key: Sequence[int], iteration: int) -> np.random.Generator:
    ss = np.random.SeedSequence(seed, spawn_key=tuple(cell_key) + (iteration,))
    return np.random.Generator(np.random.PCG64(ss))


@dataclass
class CellResult:
    scenario: ScenarioSpec
    rejections: dict
    degenerate: dict
    iterations: int
    censoring: float
    seed: int

    def rate(self, test: str) -> float:
        return self.rejections[test] / self.iterations


@dataclass
class StudyResult:
    cells: list = field(default_factory=list)
    seed: int = 0

    def cell(self, sid: str, n1: int, n2: int, censor: float) -> CellResult:
        for c in self.cells:
            s = c.scenario
            if (s.id, s.n1, s.n2) == (sid, n1, n2) and abs(s.censor_target - censor) < 1e-9:
                return c
        raise KeyError((sid, n1, n2, censor))


def run_iteration(scenario: ScenarioSpec, bounds, seed: int, iteration: int, tests=TESTS):
    """Decisions (reject / not / degenerate) of every test on one dataset."""
    rng = iteration_rng(seed, scenario.cell_key, iteration)
    s1, s2 = generate_dataset(scenario, rng, bounds)
    censored = (s1.n - s1.n_events + s2.n - s2.n_events) / (s1.n + s2.n)
    out = {}
    for name in tests:
        try:
            if name == "logrank":
                p = logrank_test(s1, s2).p_value
            elif name == "rmstd":
                p = rmst_difference_test(s1, s2).p_value
            elif name == "abs_normal":
                p = abs_normal_test(s1, s2).p_value
            elif name == "absp":
                p = permutation_test(s1, s2, FULL, scenario.permutations, rng).p_value
            else:
                raise ValueError(f"unknown test {name!r}")
        except (DegenerateStatisticError, SurvivalDataError, IntervalError):
            out[name] = None
            continue
        out[name] = p < scenario.alpha
    return out, censored


def _run_chunk(args):
    scenario, bounds, seed, iterations, tests = args
    return [run_iteration(scenario, bounds, seed, i, tests) for i in iterations]


def run_cell(scenario: ScenarioSpec, seed: int, tests=TESTS, n_jobs: int = 1) -> CellResult:
    bounds = scenario_censoring(scenario)
    its = list(range(scenario.iterations))
    if n_jobs > 1:
        chunks = [its[k::n_jobs] for k in range(n_jobs)]
        with ProcessPoolExecutor(n_jobs) as pool:
            parts = pool.map(_run_chunk, [(scenario, bounds, seed, c, tests) for c in chunks])
            outcomes = [o for part in parts for o in part]
    else:
        outcomes = _run_chunk((scenario, bounds, seed, its, tests))
    rejections = {t: 0 for t in tests}
    degenerate = {t: 0 for t in tests}
    censor_total = 0.0
    for decisions, censored in outcomes:
        censor_total += censored
        for t, d in decisions.items():
            if d is None:
                degenerate[t] += 1
            elif d:
                rejections[t] += 1
    return CellResult(
        scenario=scenario,
        rejections=rejections,
        degenerate=degenerate,
        iterations=scenario.iterations,
        censoring=censor_total / scenario.iterations,
        seed=seed,
    )


def run_study(grid: Sequence[ScenarioSpec], seed: int = 0, tests=TESTS, n_jobs: int = 1, progress=None) -> StudyResult:
    if not grid:
        raise ValueError("empty scenario grid")
    result = StudyResult(seed=seed)
    for scenario in grid:
        result.cells.append(run_cell(scenario, seed, tests, n_jobs))
        if progress is not None:
            progress(result.cells[-1])
    return result


def study_grid(
    situations: Sequence[str] = SITUATION_IDS,
    sizes: Sequence[tuple[int, int]] = SIZE_PAIRS,
    censor_rates: Sequence[float] = CENSOR_RATES,
    preset: str = "desk",
    alpha: float = 0.05,
) -> list[ScenarioSpec]:
    if preset not in PRESETS:
        raise KeyError(f"unknown preset {preset!r}; valid: {', '.join(PRESETS)}")
    iterations, permutations = PRESETS[preset]
    return [
        ScenarioSpec.situation(sid, n1, n2, cr, alpha=alpha, iterations=iterations, permutations=permutations)
        for sid, (n1, n2), cr in product(situations, sizes, censor_rates)
    ]


# ---------------------------------------------------------------------------
# summaries


SUMMARY_HEADER = "Cell-mean summary (balanced marginal means of cell rates; not a fitted ANOVA)"


def summarize_study(result, mode: str = "type1_deviation", tests: Sequence[str] = TESTS) -> dict:
    """Marginal means of the per-cell outcome by TEST x factor.

    ``result`` is a :class:`StudyResult` or an iterable of
    ``(scenario, n1, n2, censor, test, rate)`` records. The outcome is
    ``rate * 100 - 5`` for ``mode="type1_deviation"`` and ``rate`` for
    ``mode="power"``. Returns ``{"NUM": {(n1, n2): {test: y}}, "CENSORE": ...,
    "SITUATION": ..., "TOTAL": {test: y}}``.
    """
    if mode not in ("type1_deviation", "power"):
        raise ValueError("mode must be 'type1_deviation' or 'power'")
    if isinstance(result, StudyResult):
        records = [
            (c.scenario.id, c.scenario.n1, c.scenario.n2, c.scenario.censor_target, t, c.rate(t))
            for c in result.cells
            for t in tests
            if t in c.rejections
        ]
    else:
        records = list(result)

    table = {}
    for sid, n1, n2, cr, test, rate in records:
        table[(sid, (int(n1), int(n2)), round(float(cr), 6), test)] = float(rate)
    sits = sorted({k[0] for k in table}, key=lambda s: (SITUATION_IDS.index(s) if s in SITUATION_IDS else 99, s))
    nums = [p for p in SIZE_PAIRS if any(k[1] == p for k in table)]
    nums += sorted({k[1] for k in table} - set(nums))
    crs = sorted({k[2] for k in table})
    tests = [t for t in tests if any(k[3] == t for k in table)]

    missing = [
        key for key in product(sits, nums, crs, tests) if key not in table
    ]
    if missing:
        listed = "; ".join(f"{s} {n[0]}/{n[1]} CR={c} {t}" for s, n, c, t in missing[:20])
        more = "" if len(missing) <= 20 else f" (+{len(missing) - 20} more)"
        raise ValueError(f"incomplete grid, missing cells: {listed}{more}")

    def y(rate):
        return rate * 100.0 - 5.0 if mode == "type1_deviation" else rate

    def margin(position, levels):
        out = {}
        for level in levels:
            out[level] = {}
            for t in tests:
                vals = [y(r) for k, r in table.items() if k[position] == level and k[3] == t]
                out[level][t] = float(np.mean(vals))
        return out

    return {
        "mode": mode,
        "NUM": margin(1, nums),
        "CENSORE": margin(2, crs),
        "SITUATION": margin(0, sits),
        "TOTAL": {t: float(np.mean([y(r) for k, r in table.items() if k[3] == t])) for t in tests},
    }


def render_summary(summary: dict) -> str:
    tests = list(summary["TOTAL"])
    lines = [SUMMARY_HEADER, "TEST".ljust(22) + "".join(TEST_LABELS.get(t, t).rjust(10) for t in tests)]

    def row(label, values):
        return label.ljust(22) + "".join(f"{values[t]:10.3f}" for t in tests)

    for level, vals in summary["NUM"].items():
        lines.append(row(f"NUM ({level[0]}, {level[1]})", vals))
    for level, vals in summary["CENSORE"].items():
        lines.append(row(f"CENSORE {level:.2f}", vals))
    for level, vals in summary["SITUATION"].items():
        lines.append(row(f"SITUATION {level}", vals))
    lines.append(row("TOTAL", summary["TOTAL"]))
    return "\n".join(lines) + "\n"


def render_rate_table(result: StudyResult, sid: str, tests: Sequence[str] = TESTS) -> str:
    """Rejection rates of one scenario laid out as N1, N2, censoring, then one column per test."""
    cells = [c for c in result.cells if c.scenario.id == sid]
    head = ["N1", "N2", "Censore", "Achieved"] + [TEST_LABELS.get(t, t) for t in tests]
    lines = [f"Scenario {sid}", "\t".join(head)]
    for c in cells:
        s = c.scenario
        vals = [f"{c.rate(t):.3f}" if t in c.rejections else "/" for t in tests]
        lines.append("\t".join([str(s.n1), str(s.n2), f"{s.censor_target:.2f}", f"{c.censoring:.3f}"] + vals))
    return "\n".join(lines) + "\n"
