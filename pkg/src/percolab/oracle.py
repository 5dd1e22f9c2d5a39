"""Exact reference values: depth-L tree recursions, Galton-Watson fixed
points, and exhaustive enumeration of the self-destructive process on
small graphs."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from numba import njit
from scipy.optimize import brentq

from . import _kernels as K
from .errors import ResourceLimitError, UsageError
from .fields import check_probability
from .graphs import FiniteGraph

ENUMERATION_LIMIT = 14


@dataclass(frozen=True)
class TreeRecursion:
    """q_0 = 1, q_{l+1} = 1 - (1 - p q_l)^b and theta_l = p q_l.

    q_l is the probability that an open vertex has an open path down to
    depth l below it in the rooted b-ary tree.
    """

    b: int
    p: float
    q_by_depth: tuple[float, ...]

    @classmethod
    def run(cls, b: int, p: float, L: int) -> "TreeRecursion":
        if b < 1 or L < 0:
            raise UsageError("need b >= 1 and L >= 0")
        p = check_probability(p)
        q = [1.0]
        for _ in range(L):
            q.append(1.0 - (1.0 - p * q[-1]) ** b)
        return cls(b, p, tuple(q))

    @property
    def theta_by_depth(self) -> tuple[float, ...]:
        return tuple(self.p * q for q in self.q_by_depth)


def tree_theta_depth(b: int, p: float, L: int) -> float:
    """P[origin is joined to depth L] in ``rooted_tree(b, L)``."""
    return TreeRecursion.run(b, p, L).theta_by_depth[-1]


def tree_theta_limit(b: int, p: float, tol: float = 1e-12) -> float:
    """Infinite-depth limit of ``tree_theta_depth``."""
    if tol <= 0:
        raise UsageError("tol must be positive")
    p = check_probability(p)
    if b * p <= 1.0:
        return 0.0
    if p == 1.0:
        return 1.0
    # nonzero root of q = 1 - (1 - p q)^b, found as the root of
    # (1 - (1 - p q)^b) / q - 1, which is b p - 1 > 0 at 0+ and < 0 at 1
    h = lambda q: -np.expm1(b * np.log1p(-p * q)) / q - 1.0
    q = brentq(h, 1e-300, 1.0, xtol=tol / 4, rtol=4 * np.finfo(float).eps)
    return p * q


def tree_pc(b: int) -> float:
    if b < 2:
        raise UsageError(f"b={b}: the rooted {b}-ary tree has no phase transition")
    return 1.0 / b


# ---------------------------------------------------------------------------
# exhaustive enumeration


@njit(cache=True)
def _enumerate_tables(indptr, indices, boundary, origin, n):
    """For every vertex mask m: survivors of m after destruction, the origin
    event, and the number of boundary-touching clusters of m."""
    total = 1 << n
    survivors = np.empty(total, dtype=np.int64)
    origin_hit = np.empty(total, dtype=np.bool_)
    n_inf = np.empty(total, dtype=np.int64)
    mask = np.zeros(n, dtype=np.bool_)
    for m in range(total):
        for v in range(n):
            mask[v] = (m >> v) & 1
        inf, count = K.infinite_mask(indptr, indices, boundary, mask)
        s = 0
        for v in range(n):
            if mask[v] and not inf[v]:
                s |= 1 << v
        survivors[m] = s
        origin_hit[m] = inf[origin]
        n_inf[m] = count
    return survivors, origin_hit, n_inf


def _popcounts(n):
    m = np.arange(1 << n, dtype=np.int64)
    c = np.zeros_like(m)
    for v in range(n):
        c += (m >> v) & 1
    return c


def _superset_counts(indicator, pop, n):
    """H[A, k] = #{phi superset of A with |phi| = k and indicator(phi)}."""
    h = np.zeros((1 << n, n + 1), dtype=np.int64)
    h[np.arange(1 << n), pop] = indicator
    for v in range(n):
        view = h.reshape(1 << (n - 1 - v), 2, 1 << v, n + 1)
        view[:, 0] += view[:, 1]
    return h


def _bernoulli_weights(x, n, exact):
    """w[k] = x^k (1 - x)^(n - k) for k = 0..n."""
    if exact:
        x = Fraction(x)
        return [x ** k * (1 - x) ** (n - k) for k in range(n + 1)]
    return np.array([x ** k * (1.0 - x) ** (n - k) for k in range(n + 1)])


def _phi_polynomials(g: FiniteGraph, query_events):
    n = g.vertex_count
    survivors, origin_hit, n_inf = _enumerate_tables(
        g.indptr, g.indices, g.boundary_mask, g.origin, n)
    pop = _popcounts(n)
    tables = {
        "origin": origin_hit.astype(np.int64),
        "any": (n_inf >= 1).astype(np.int64),
    }
    for j in range(n + 1):
        tables[f"N={j}"] = (n_inf == j).astype(np.int64)
    return survivors, pop, {q: _superset_counts(tables[q], pop, n) for q in query_events}


def enumerate_phi_exact(g: FiniteGraph, p, delta, query: str = "origin",
                        limit: int = ENUMERATION_LIMIT, exact: bool = False):
    """Exact law of Phi(p, delta) on a small graph by summing over all omega.

    ``query`` is ``origin`` (P[origin in a boundary cluster of Phi]),
    ``any`` (P[N(Phi) >= 1]) or ``distribution`` (list of P[N(Phi) = j]).
    Given omega, survivors (omega minus its boundary clusters) are open for
    sure and every other vertex is open with probability delta; the
    delta-dependence is kept as integer counts per number of open
    vertices, so no second sum over reinforcement patterns is needed.
    With ``exact=True`` and rational inputs the result is a Fraction.
    """
    n = g.vertex_count
    if n > limit:
        raise ResourceLimitError(f"{n} vertices exceeds enumeration limit={limit}")
    if query not in ("origin", "any", "distribution"):
        raise UsageError(f"unknown query {query!r}")
    if not exact:
        p = check_probability(p)
        delta = check_probability(delta, "delta")
    events = [f"N={j}" for j in range(n + 1)] if query == "distribution" else [query]
    survivors, pop, polys = _phi_polynomials(g, events)
    wp = _bernoulli_weights(p, n, exact)

    results = []
    for ev in events:
        h = polys[ev]
        if exact:
            total = Fraction(0)
            d = Fraction(delta)
            cache = {}
            for m in range(1 << n):
                a = int(survivors[m])
                if a not in cache:
                    s = int(pop[a])
                    cache[a] = sum(
                        (int(h[a, k]) * d ** (k - s) * (1 - d) ** (n - k)
                         for k in range(s, n + 1) if h[a, k]),
                        Fraction(0),
                    )
                total += wp[int(pop[m])] * cache[a]
            results.append(total)
        else:
            # conditional probability for each survivor set A, then average over omega
            s = pop[:, None]
            k = np.arange(n + 1)[None, :]
            expo = np.where(k >= s, k - s, 0)
            weights = np.where(k >= s, delta ** expo * (1.0 - delta) ** (n - k), 0.0)
            cond = (h * weights).sum(axis=1)
            results.append(float(np.dot(wp[pop], cond[survivors])))
    if query == "distribution":
        return results
    return results[0]


def enumerate_bernoulli_exact(g: FiniteGraph, p, query: str = "origin", **kw):
    """Exact Bernoulli(p) probabilities: Phi(0, p) is plain Bernoulli(p)."""
    return enumerate_phi_exact(g, 0 if kw.get("exact") else 0.0, p, query, **kw)
