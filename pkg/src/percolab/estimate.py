"""Monte Carlo summaries: binomial and quantile intervals, noisy bisection,
and finite-size threshold estimators built on per-replica thresholds."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import BracketError, UsageError

Z95 = stats.norm.ppf(0.975)


@dataclass(frozen=True)
class EstimateCI:
    value: float
    stderr: float
    n_samples: int
    ci_low: float
    ci_high: float
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not (self.ci_low <= self.value <= self.ci_high) or self.stderr < 0:
            raise ValueError(f"inconsistent estimate {self}")

    def overlaps(self, other: "EstimateCI") -> bool:
        return self.ci_low <= other.ci_high and other.ci_low <= self.ci_high


def binomial_estimate(successes: int, n: int, **meta) -> EstimateCI:
    """Frequency with a 95% Wilson score interval."""
    if n < 1:
        raise UsageError("need at least one sample")
    phat = successes / n
    ci = stats.binomtest(int(successes), int(n)).proportion_ci(0.95, method="wilson")
    return EstimateCI(phat, math.sqrt(phat * (1 - phat) / n), n,
                      float(min(ci.low, phat)), float(max(ci.high, phat)), dict(meta))


def mean_estimate(values, **meta) -> EstimateCI:
    """Sample mean with a normal 95% interval."""
    values = np.asarray(values, dtype=float)
    n = len(values)
    if n < 1:
        raise UsageError("need at least one sample")
    m = float(values.mean())
    se = float(values.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return EstimateCI(m, se, n, float(m - Z95 * se), float(m + Z95 * se), dict(meta))


def quantile_estimate(samples, level: float, **meta) -> EstimateCI:
    """Empirical ``level``-quantile, ``inf{x : F_n(x) >= level}``, with a
    distribution-free 95% interval from binomial order statistics.

    Entries may be ``inf`` (replicas that never cross); the estimate is
    then finite only if fewer than ``1 - level`` of them are infinite.
    """
    x = np.sort(np.asarray(samples, dtype=float))
    n = len(x)
    if n < 1:
        raise UsageError("need at least one sample")
    if not 0 < level < 1:
        raise UsageError(f"level={level} must be in (0, 1)")
    k = max(int(math.ceil(level * n)), 1)
    value = x[k - 1]
    if not np.isfinite(value):
        raise BracketError(f"fewer than a fraction {level:.4g} of {n} replicas ever cross")
    lo_rank = int(stats.binom.ppf(0.025, n, level))
    hi_rank = int(stats.binom.ppf(0.975, n, level)) + 1
    lo = x[max(lo_rank, 1) - 1]
    hi = x[min(hi_rank, n) - 1]
    if not np.isfinite(hi):
        hi = math.inf
    # density-free standard error: half width of the rank interval
    se = (hi - lo) / (2 * Z95) if np.isfinite(hi) else math.inf
    return EstimateCI(float(value), float(se), n, float(min(lo, value)), float(max(hi, value)), dict(meta))


def empirical_cdf(sorted_samples: np.ndarray, grid) -> np.ndarray:
    return np.searchsorted(sorted_samples, np.asarray(grid), side="right") / len(sorted_samples)


def bisect_level(probe, lo: float, hi: float, level: float, tol: float, max_steps: int = 60):
    """Noisy bisection for the point where an increasing frequency crosses ``level``.

    ``probe(x, step)`` returns an EstimateCI computed from fresh replicas
    (``step`` numbers the probe so callers can allocate disjoint replica
    blocks). Returns (lo, hi, history).
    """
    history = []
    f_lo = probe(lo, 0)
    f_hi = probe(hi, 1)
    history += [(lo, f_lo), (hi, f_hi)]
    if not (f_lo.value < level <= f_hi.value):
        raise BracketError(
            f"no bracket: estimate {f_lo.value:.4g} at {lo} and {f_hi.value:.4g} at {hi}, level {level:.4g}"
        )
    step = 2
    while hi - lo >= tol and step < max_steps:
        mid = 0.5 * (lo + hi)
        f_mid = probe(mid, step)
        history.append((mid, f_mid))
        step += 1
        if f_mid.value >= level:
            hi = mid
        else:
            lo = mid
    return lo, hi, history


# ---------------------------------------------------------------------------
# finite-size estimators from per-replica thresholds


def _first_downcrossing(grid, f):
    """First grid interval where ``f`` goes from > 0 to <= 0, linearly interpolated."""
    pos = f > 0
    for i in range(len(f) - 1):
        if pos[i] and not pos[i + 1] and np.isfinite(f[i]) and np.isfinite(f[i + 1]):
            x0, x1, y0, y1 = grid[i], grid[i + 1], f[i], f[i + 1]
            return float(x0 + (x1 - x0) * y0 / (y0 - y1)) if y0 != y1 else float(x1)
    return math.nan


def curvature_statistic(depths, cdfs) -> np.ndarray:
    """Second divided difference in depth of 1 / theta_L.

    On trees theta_L decays like 1/L at criticality, so 1/theta_L is affine
    in L there; it is convex below the threshold (exponential decay) and
    concave above it (saturation).
    """
    (a, b, c), (fa, fb, fc) = depths, cdfs
    with np.errstate(divide="ignore", invalid="ignore"):
        ia, ib, ic = 1 / fa, 1 / fb, 1 / fc
        return ((ic - ib) / (c - b) - (ib - ia) / (b - a)) / (c - a)


def scaled_difference(depths, cdfs, exponent: float = 1.0) -> np.ndarray:
    """``L'^a theta_L' - L^a theta_L`` for two depths L < L'."""
    (a, b), (fa, fb) = depths, cdfs
    return b ** exponent * fb - a ** exponent * fa


def finite_size_threshold(depths, threshold_samples, grid, method: str = "curvature",
                          exponent: float = 1.0, n_boot: int = 200, seed: int = 0,
                          min_count: int = 100) -> EstimateCI:
    """Threshold from origin-crossing curves at several truncation depths.

    ``threshold_samples[i]`` holds per-replica crossing values for depth
    ``depths[i]`` (replica j of every depth should share its field so the
    curves are coupled). ``curvature`` needs three depths, ``crossing``
    two. Grid points where any curve counts fewer than ``min_count``
    crossings are skipped. The interval is a percentile bootstrap over
    replicas.
    """
    depths = [int(d) for d in depths]
    samples = [np.asarray(s, dtype=float) for s in threshold_samples]
    grid = np.asarray(grid, dtype=float)
    if method == "curvature" and len(depths) != 3:
        raise UsageError("curvature method needs exactly three depths")
    if method == "crossing" and len(depths) != 2:
        raise UsageError("crossing method needs exactly two depths")
    if method not in ("curvature", "crossing"):
        raise UsageError(f"unknown finite-size method {method!r}")
    n = len(samples[0])
    if any(len(s) != n for s in samples):
        raise UsageError("all depths need the same number of replicas")

    def estimate(idx):
        cdfs = [empirical_cdf(np.sort(s[idx]), grid) for s in samples]
        if method == "curvature":
            f = curvature_statistic(depths, cdfs)
        else:
            f = -scaled_difference(depths, cdfs, exponent)
        # ignore the far tail where some curve rests on a handful of replicas
        f = np.where(np.min(cdfs, axis=0) * n >= min_count, f, np.nan)
        return _first_downcrossing(grid, f)

    value = estimate(np.arange(n))
    if not np.isfinite(value):
        raise BracketError("finite-size curves do not cross inside the grid")
    rng = np.random.default_rng(seed)
    boots = np.array([estimate(rng.integers(0, n, n)) for _ in range(n_boot)])
    boots = boots[np.isfinite(boots)]
    if len(boots) < max(10, n_boot // 2):
        lo, hi, se = grid[0], grid[-1], math.inf
    else:
        lo, hi = np.quantile(boots, [0.025, 0.975])
        se = float(boots.std(ddof=1))
    return EstimateCI(value, se, n, float(min(lo, value)), float(max(hi, value)),
                      {"method": method, "depths": depths, "n_boot": len(boots)})
