import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from percolab.errors import BracketError, UsageError
from percolab.estimate import (
    EstimateCI, _first_downcrossing, binomial_estimate, bisect_level, curvature_statistic,
    empirical_cdf, finite_size_threshold, mean_estimate, quantile_estimate,
)
from percolab.oracle import tree_theta_depth


@given(st.integers(1, 500), st.data())
def test_binomial_interval_contains_value(n, data):
    k = data.draw(st.integers(0, n))
    e = binomial_estimate(k, n)
    assert 0 <= e.ci_low <= e.value <= e.ci_high <= 1
    assert e.stderr >= 0


def test_wilson_known_value():
    # Wilson interval for 0 of 100 at 95%: upper = z^2 / (n + z^2)
    e = binomial_estimate(0, 100)
    z2 = 1.959963984540054 ** 2
    assert e.ci_high == pytest.approx(z2 / (100 + z2), rel=1e-9)
    assert e.ci_low == 0.0


def test_binomial_needs_samples():
    with pytest.raises(UsageError):
        binomial_estimate(0, 0)


def test_estimate_validates():
    with pytest.raises(ValueError):
        EstimateCI(0.5, 0.1, 10, 0.6, 0.7)
    a = EstimateCI(0.5, 0.0, 1, 0.4, 0.6)
    assert a.overlaps(EstimateCI(0.65, 0.0, 1, 0.55, 0.7))
    assert not a.overlaps(EstimateCI(0.75, 0.0, 1, 0.7, 0.8))


def test_mean_estimate():
    e = mean_estimate([1.0, 2.0, 3.0])
    assert e.value == 2.0 and e.stderr == pytest.approx(1 / math.sqrt(3))


def test_quantile_matches_definition():
    x = np.arange(1, 101) / 100.0
    e = quantile_estimate(np.random.default_rng(0).permutation(x), 0.25)
    assert e.value == 0.25
    assert e.ci_low <= 0.25 <= e.ci_high


def test_quantile_with_infinite_entries():
    x = np.array([0.1, 0.2, np.inf, np.inf])
    assert quantile_estimate(x, 0.5).value == 0.2
    with pytest.raises(BracketError):
        quantile_estimate(x, 0.75)


def test_quantile_interval_coverage():
    # empirical check of the order-statistic interval on uniform samples
    rng = np.random.default_rng(1)
    covered = 0
    for _ in range(300):
        e = quantile_estimate(rng.random(400), 0.1)
        covered += e.ci_low <= 0.1 <= e.ci_high
    assert covered / 300 > 0.9


def test_empirical_cdf():
    s = np.array([0.1, 0.2, 0.2, 0.9])
    assert empirical_cdf(s, [0.0, 0.2, 1.0]).tolist() == [0.0, 0.75, 1.0]


def _exact_probe(f):
    return lambda x, step: EstimateCI(f(x), 0.0, 1, f(x), f(x))


def test_bisection_finds_crossing():
    lo, hi, hist = bisect_level(_exact_probe(lambda x: x ** 2), 0.0, 1.0, 0.25, 1e-6)
    assert hi - lo < 1e-6 and lo <= 0.5 <= hi
    xs = [x for x, _ in hist]
    assert xs[:2] == [0.0, 1.0] and len(xs) == len(set(xs))


def test_bisection_no_bracket():
    with pytest.raises(BracketError):
        bisect_level(_exact_probe(lambda x: 0.1 * x), 0.0, 1.0, 0.5, 1e-3)


def test_curvature_on_exact_curves():
    grid = np.arange(0.3, 0.8, 0.001)
    for depths, width in [((8, 10, 12), 0.01), ((20, 30, 40), 0.002)]:
        curves = [np.array([tree_theta_depth(2, p, L) for p in grid]) for L in depths]
        assert abs(_first_downcrossing(grid, curvature_statistic(depths, curves)) - 0.5) < width


def test_finite_size_threshold_from_samples():
    # per-replica origin thresholds on nested trees, drawn from the exact law by inversion
    rng = np.random.default_rng(3)
    grid = np.arange(0.3, 0.8, 0.002)
    depths = (8, 10, 12)
    u = rng.random(20000)
    samples = []
    for L in depths:
        cdf = np.array([tree_theta_depth(2, p, L) for p in grid])
        idx = np.searchsorted(cdf, u, side="left")
        samples.append(np.where(idx < len(grid), grid[np.minimum(idx, len(grid) - 1)], np.inf))
    est = finite_size_threshold(depths, samples, grid, "curvature", n_boot=50)
    assert 0.47 < est.value < 0.53
    assert est.ci_low <= est.value <= est.ci_high


def test_finite_size_usage():
    with pytest.raises(UsageError):
        finite_size_threshold((8, 10), [[0.1], [0.2]], [0.1], "curvature")
    with pytest.raises(UsageError):
        finite_size_threshold((8, 10), [[0.1], [0.2]], [0.1], "collapse")
