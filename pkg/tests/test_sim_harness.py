import math

import numpy as np
import pytest
from scipy import stats

from abssurv.sim_harness import (
    SITUATIONS,
    CellResult,
    HazardSpec,
    ScenarioSpec,
    StudyResult,
    calibrate_censoring,
    generate_dataset,
    iteration_rng,
    lifetime_from_uniform,
    render_rate_table,
    render_summary,
    run_cell,
    run_iteration,
    sample_lifetime,
    scenario_censoring,
    study_grid,
    summarize_study,
)

from reference_rates import (
    DEVIATION_CENSORE,
    DEVIATION_NUM,
    DEVIATION_NUM_INCONSISTENT,
    DEVIATION_TOTAL,
    TESTS,
    null_rate_records,
)


def test_exponential_inversion():
    t = lifetime_from_uniform(HazardSpec.exponential(0.2), 0.5)
    assert t == pytest.approx(-math.log(0.5) / 0.2, rel=1e-14)
    assert t == pytest.approx(3.465736, abs=1e-6)


def test_piecewise_breakpoint_inversion():
    h2 = SITUATIONS["IV"][1]
    assert lifetime_from_uniform(h2, math.exp(-0.8)) == pytest.approx(0.8, abs=1e-14)


def test_single_segment_piecewise_is_exponential():
    u = np.random.default_rng(0).random(1000)
    a = lifetime_from_uniform(HazardSpec.piecewise((0.3,), ()), u)
    b = lifetime_from_uniform(HazardSpec.exponential(0.3), u)
    np.testing.assert_array_equal(a, b)


def test_weibull_shape_one_matches_exponential():
    lam = 0.25
    w = HazardSpec.weibull(1.0, 1 / lam)
    e = HazardSpec.exponential(lam)
    u = np.linspace(0.001, 1, 500)
    np.testing.assert_allclose(lifetime_from_uniform(w, u), lifetime_from_uniform(e, u), rtol=1e-12)
    x = sample_lifetime(w, np.random.default_rng(1), 5000)
    y = sample_lifetime(e, np.random.default_rng(2), 5000)
    assert stats.ks_2samp(x, y).pvalue > 0.001


@pytest.mark.parametrize("sid", list(SITUATIONS))
def test_inverse_hazard_round_trip_and_monotone(sid):
    u = np.sort(np.random.default_rng(3).random(2000))[::-1]
    for h in SITUATIONS[sid]:
        t = lifetime_from_uniform(h, u)
        np.testing.assert_allclose(h.cumulative_hazard(t), -np.log(u), rtol=1e-12, atol=1e-12)
        assert np.all(np.diff(t) > 0)


def test_censoring_target_zero():
    assert math.isinf(calibrate_censoring(HazardSpec.exponential(0.25), 0.0))
    sc = ScenarioSpec.situation("I", 30, 30, 0.0)
    s1, s2 = generate_dataset(sc, np.random.default_rng(0))
    assert s1.n_events == 30 and s2.n_events == 30
    with pytest.raises(ValueError):
        calibrate_censoring(HazardSpec.exponential(0.25), 1.0)


def test_exponential_calibration_matches_bisection_oracle():
    def g(a):
        return (1 - math.exp(-0.25 * a)) / (0.25 * a) - 0.30

    lo, hi = 1e-6, 1000.0
    for _ in range(200):
        mid = (lo + hi) / 2
        if g(mid) > 0:
            lo = mid
        else:
            hi = mid
    assert calibrate_censoring(HazardSpec.exponential(0.25), 0.30) == pytest.approx(lo, rel=1e-9)


@pytest.mark.parametrize("sid", list(SITUATIONS))
@pytest.mark.parametrize("target", [0.15, 0.45])
def test_calibration_replay(sid, target):
    rng = np.random.default_rng(99)
    for h in SITUATIONS[sid]:
        a = calibrate_censoring(h, target)
        x = sample_lifetime(h, rng, 100_000)
        c = rng.uniform(0, a, 100_000)
        assert np.mean(c < x) == pytest.approx(target, abs=0.01)


def test_weibull_mean_survival_matches_quadrature():
    from scipy import integrate

    h = SITUATIONS["VI"][0]
    for a in (0.5, 3.0, 12.0):
        area, _ = integrate.quad(lambda t: float(h.survival(t)), 0, a)
        assert h.mean_survival(a) == pytest.approx(area / a, rel=1e-10)


def test_dataset_determinism_and_censoring_level():
    sc = ScenarioSpec.situation("I", 100, 100, 0.30)
    bounds = scenario_censoring(sc)
    a = generate_dataset(sc, np.random.default_rng(5), bounds)
    b = generate_dataset(sc, np.random.default_rng(5), bounds)
    assert a == b
    fractions = []
    for i in range(40):
        s1, s2 = generate_dataset(sc, iteration_rng(7, sc.cell_key, i), bounds)
        fractions.append(1 - (s1.n_events + s2.n_events) / 200)
    fractions = np.asarray(fractions)
    assert abs(fractions.mean() - 0.30) < 0.02
    assert np.mean(np.abs(fractions - 0.30) <= 0.06) >= 0.85


def test_iteration_order_does_not_matter():
    sc = ScenarioSpec.situation("IV", 20, 20, 0.15, iterations=6, permutations=50)
    bounds = scenario_censoring(sc)
    forward = [run_iteration(sc, bounds, 3, i) for i in range(6)]
    backward = [run_iteration(sc, bounds, 3, i) for i in reversed(range(6))][::-1]
    assert forward == backward


def test_run_cell_is_reproducible_and_parallel_safe():
    sc = ScenarioSpec.situation("II", 20, 20, 0.0, iterations=12, permutations=50)
    a = run_cell(sc, seed=1)
    b = run_cell(sc, seed=1)
    c = run_cell(sc, seed=1, n_jobs=2)
    assert a.rejections == b.rejections == c.rejections
    assert a.censoring == c.censoring == 0.0
    assert set(a.rejections) == set(TESTS)


def test_scenario_lookup_and_grid():
    with pytest.raises(KeyError, match="valid ids"):
        ScenarioSpec.situation("VII")
    assert ScenarioSpec.situation("I").is_null and not ScenarioSpec.situation("V").is_null
    grid = study_grid(["I"], preset="desk")
    assert len(grid) == 20 and grid[0].iterations == 500 and grid[0].permutations == 500
    assert study_grid(["I"], preset="full")[0].permutations == 1000
    with pytest.raises(KeyError):
        study_grid(["I"], preset="huge")


def _fake_result(rate_fn):
    cells = []
    for sc in study_grid(["I", "II"], sizes=[(20, 20), (50, 50)], censor_rates=[0.0, 0.3]):
        rej = {t: int(round(rate_fn(sc, t) * sc.iterations)) for t in TESTS}
        cells.append(CellResult(sc, rej, {t: 0 for t in TESTS}, sc.iterations, sc.censor_target, 0))
    return StudyResult(cells, 0)


def test_summary_of_all_zero_rates():
    summary = summarize_study(_fake_result(lambda sc, t: 0.0))
    for part in ("NUM", "CENSORE", "SITUATION"):
        for vals in summary[part].values():
            assert all(v == -5.0 for v in vals.values())
    assert all(v == -5.0 for v in summary["TOTAL"].values())


def test_power_summary_of_single_cell():
    sc = ScenarioSpec.situation("V", 100, 100, 0.0, iterations=10)
    res = StudyResult([CellResult(sc, {t: 7 for t in TESTS}, {t: 0 for t in TESTS}, 10, 0.0, 0)])
    summary = summarize_study(res, mode="power")
    assert summary["TOTAL"] == {t: 0.7 for t in TESTS}


def test_summary_of_reference_null_rates():
    summary = summarize_study(null_rate_records())
    assert summary["NUM"][(20, 20)]["absp"] == pytest.approx(-1.25, abs=1e-12)
    for pair, expected in DEVIATION_NUM.items():
        for t, x in zip(TESTS, expected):
            want = DEVIATION_NUM_INCONSISTENT.get((pair, t), x)
            assert summary["NUM"][pair][t] == pytest.approx(want, abs=1e-9)
    for cr, expected in DEVIATION_CENSORE.items():
        for t, x in zip(TESTS, expected):
            if x is not None:
                assert summary["CENSORE"][cr][t] == pytest.approx(x, abs=1e-9)
    assert [summary["TOTAL"][t] for t in TESTS] == pytest.approx(list(DEVIATION_TOTAL), abs=1e-9)
    text = render_summary(summary)
    assert text.startswith("Cell-mean summary")
    assert "-1.250" in text


def test_incomplete_grid_lists_missing_cells():
    records = [r for r in null_rate_records() if not (r[1] == 50 and r[3] == 0.15 and r[4] == "absp")]
    with pytest.raises(ValueError, match=r"missing cells: I 50/50 CR=0.15 absp"):
        summarize_study(records)


def test_render_rate_table():
    res = _fake_result(lambda sc, t: 0.05)
    text = render_rate_table(res, "II")
    lines = text.strip().splitlines()
    assert lines[0] == "Scenario II" and len(lines) == 2 + 4
    assert "0.050" in lines[2]
