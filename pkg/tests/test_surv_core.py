import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from abssurv.surv_core import (
    Observation,
    Sample,
    SurvivalDataError,
    eval_surv,
    follow_up_end,
    km_estimate,
    median_survival,
    pooled_grid,
)

from conftest import km_redistribute

observations = st.lists(
    st.tuples(st.integers(0, 40).map(lambda k: k / 4), st.integers(0, 1)), min_size=1, max_size=40
)


def test_single_event_drops_to_zero():
    c = km_estimate(Sample([2], [1]))
    assert list(c.grid) == [2]
    assert list(c.surv) == [0]
    assert list(c.n_at_risk) == [1]
    assert list(c.n_events) == [1]
    assert c.absorbed


def test_three_events_hand_product_limit():
    c = km_estimate(Sample([1, 3, 5], [1, 1, 1]))
    np.testing.assert_allclose(c.surv, [2 / 3, 1 / 3, 0], rtol=0, atol=1e-15)
    # Greenwood: (2/3)^2 * 1/(3*2) and (1/3)^2 * (1/6 + 1/2)
    np.testing.assert_allclose(c.var, [2 / 27, 2 / 27, 0], rtol=1e-14)


def test_all_censored_curve_stays_at_one():
    c = km_estimate(Sample([1, 2], [0, 0]))
    assert c.grid.size == 0
    for t in (0, 1, 2, 5):
        assert eval_surv(c, t) == (1.0, 0.0)
    assert median_survival(c) is None


def test_eval_surv_is_right_continuous():
    c = km_estimate(Sample([1, 3, 5], [1, 1, 1]))
    assert eval_surv(c, 0.5) == (1.0, 0.0)
    s3, v3 = eval_surv(c, 3)
    assert s3 == pytest.approx(1 / 3) and v3 == c.var[1]
    assert eval_surv(c, 4) == (s3, v3)


@pytest.mark.parametrize(
    "last1, last2, expected",
    [((5, 1), (6, 1), 6), ((5, 0), (6, 0), 5), ((5, 1), (6, 0), 6), ((6, 1), (5, 0), 5)],
)
def test_follow_up_end_cases(last1, last2, expected):
    s1 = Sample([1, last1[0]], [1, last1[1]])
    s2 = Sample([2, last2[0]], [1, last2[1]])
    assert follow_up_end(s1, s2) == expected


def test_follow_up_end_event_time_switch():
    s1 = Sample([1, 6], [1, 1])
    s2 = Sample([2, 5], [1, 0])
    assert follow_up_end(s1, s2) == 5
    assert follow_up_end(s1, s2, rule="event_time") == 6


def test_last_observation_tie_counts_as_censored():
    s = Sample([1, 4, 4], [1, 0, 1])
    assert s.last_time == 4 and s.last_status == 0


def test_pooled_grid():
    g = pooled_grid(Sample([1, 3, 5], [1, 1, 1]), Sample([2, 4, 6], [1, 1, 1]))
    assert list(g.times) == [1, 2, 3, 4, 5, 6] and g.v == 6
    g = pooled_grid(Sample([1, 2], [1, 1]), Sample([2, 3], [1, 1]))
    assert list(g.times) == [1, 2, 3]
    with pytest.raises(SurvivalDataError, match="no events"):
        pooled_grid(Sample([1], [0]), Sample([2], [0]))


def test_median_survival():
    assert median_survival(km_estimate(Sample([1, 3, 5], [1, 1, 1]))) == 3
    assert median_survival(km_estimate(Sample([2, 2, 5, 6], [1, 1, 0, 0]))) == 2


@pytest.mark.parametrize("times, status, msg", [([], [], "empty sample"), ([-1], [1], "invalid time"),
                                                ([1], [2], "invalid status"), ([math.nan], [1], "invalid time")])
def test_invalid_samples(times, status, msg):
    with pytest.raises(SurvivalDataError, match=msg):
        Sample(times, status)


def test_observation_validation():
    with pytest.raises(SurvivalDataError):
        Observation(-0.1, 1)
    s = Sample.from_observations([Observation(3.0, 0), Observation(1.0, 1)])
    assert list(s.times) == [1, 3]


def test_greenwood_variance_itself_is_not_monotone():
    # Without censoring var = S(1 - S)/n, which falls once S < 1/2.
    c = km_estimate(Sample([1, 2, 3, 4], [1, 1, 1, 1]))
    assert c.var[2] < c.var[1]


@settings(max_examples=200, deadline=None)
@given(observations)
def test_km_matches_redistribution_oracle(obs):
    t, s = zip(*obs)
    c = km_estimate(Sample(t, s))
    oracle = km_redistribute(t, s)
    for g, sv in zip(c.grid, c.surv):
        assert sv == pytest.approx(float(oracle(g)), abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(observations, st.randoms(use_true_random=False))
def test_km_invariants(obs, rnd):
    t, s = zip(*obs)
    c = km_estimate(Sample(t, s))
    assert np.all((c.surv >= 0) & (c.surv <= 1))
    assert np.all(np.diff(c.surv) <= 0)
    assert np.all(c.var >= 0)
    assert np.all(c.n_events >= 1) and np.all(np.diff(c.n_at_risk) <= 0)
    live = c.surv > 0
    greenwood_sum = c.var[live] / c.surv[live] ** 2
    assert np.all(np.diff(greenwood_sum) >= -1e-12)

    shuffled = list(obs)
    rnd.shuffle(shuffled)
    t2, s2 = zip(*shuffled)
    c2 = km_estimate(Sample(t2, s2))
    np.testing.assert_array_equal(c.surv, c2.surv)
    np.testing.assert_array_equal(c.var, c2.var)

    scaled = km_estimate(Sample(np.asarray(t) * 2.5, s))
    np.testing.assert_allclose(scaled.grid, c.grid * 2.5)
    np.testing.assert_allclose(scaled.surv, c.surv, rtol=1e-15)
    np.testing.assert_allclose(scaled.var, c.var, rtol=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0.01, 100), min_size=1, max_size=30))
def test_uncensored_km_is_empirical_survival(times):
    c = km_estimate(Sample(times, [1] * len(times)))
    arr = np.asarray(times)
    for g, sv in zip(c.grid, c.surv):
        assert sv == pytest.approx(np.sum(arr > g) / arr.size, abs=1e-12)
