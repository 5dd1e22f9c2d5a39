"""Self-destructive percolation: remove the boundary-touching clusters of a
Bernoulli(p) pattern, then reinforce with an independent Bernoulli(delta)
pattern.

Finite-volume thresholds are "eps-level" points: the parameter at which an
event frequency reaches a small fixed level. Replica ``r`` of every
estimator uses replica ``r`` of the primary and reinforcement streams, so
results are reproducible from (seed, replica range) alone.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .clusters import destroyed_set, label_clusters
from .errors import BracketError, UsageError
from .estimate import (
    EstimateCI,
    Z95,
    binomial_estimate,
    bisect_level,
    finite_size_threshold,
    mean_estimate,
    quantile_estimate,
)
from .fields import Configuration, Seed, bernoulli, check_probability, level_set, sample_field
from .graphs import FiniteGraph
from .oracle import tree_pc, tree_theta_depth

EVENTS = {
    "origin": K.EVENT_ORIGIN,
    "origin-in-infinite-cluster-of-phi": K.EVENT_ORIGIN,
    "any": K.EVENT_ANY,
    "N>=1": K.EVENT_ANY,
}

DEFAULT_CHUNK = 1 << 15


def _event_code(event: str) -> int:
    if event not in EVENTS:
        raise UsageError(f"unknown event {event!r}; expected one of {sorted(EVENTS)}")
    return EVENTS[event]


def _tree_order(g: FiniteGraph) -> bool:
    return g.family in ("rooted_tree", "regular_tree")


def _require_boundary(g: FiniteGraph) -> None:
    if not g.boundary_mask.any():
        raise UsageError(f"{g.key} has an empty boundary: no infinity proxy")


def _as_seed(seed) -> Seed:
    return seed if isinstance(seed, Seed) else Seed(int(seed))


def _chunks(first: int, n: int, chunk: int = DEFAULT_CHUNK):
    done = 0
    while done < n:
        size = min(chunk, n - done)
        yield first + done, size
        done += size


@dataclass(frozen=True, eq=False)
class SdpSample:
    p: float
    delta: float
    omega: Configuration
    destroyed: Configuration
    reinforcement: Configuration
    phi: Configuration

    def check(self, g: FiniteGraph) -> None:
        """Raise AssertionError if the sample breaks the construction's algebra."""
        assert self.phi == (self.omega - self.destroyed) | self.reinforcement
        assert self.reinforcement.issubset(self.phi)
        assert self.phi.issubset(self.omega | self.reinforcement)
        assert label_clusters(g, self.omega - self.destroyed).n_infinite == 0


def make_sdp_sample(g: FiniteGraph, seed, p: float, delta: float) -> SdpSample:
    """One realization of Phi(p, delta).

    ``seed`` is a Seed for the primary field (the reinforcement uses the same
    master and replica on the reinforcement stream) or an explicit pair.
    """
    _require_boundary(g)
    p = check_probability(p)
    delta = check_probability(delta, "delta")
    if isinstance(seed, tuple):
        s_omega, s_rein = seed
    else:
        s_omega = _as_seed(seed)
        s_rein = s_omega.with_stream("reinforcement")
    if s_omega.stream == s_rein.stream and s_omega.master == s_rein.master:
        raise UsageError("omega and reinforcement must come from independent streams")
    omega = bernoulli(g, s_omega, p)
    destroyed = destroyed_set(g, omega)
    rein = bernoulli(g, s_rein, delta)
    return SdpSample(p, delta, omega, destroyed, rein, (omega - destroyed) | rein)


def estimate_theta(g: FiniteGraph, p: float, delta: float, n_samples: int, event: str = "origin",
                   seed=0, first_replica: int = 0) -> EstimateCI:
    """Frequency over replicas of ``event`` for Phi(p, delta).

    ``origin``: the origin lies in a boundary-touching cluster of Phi;
    ``any``: Phi has at least one boundary-touching cluster.
    """
    _require_boundary(g)
    p = check_probability(p)
    delta = check_probability(delta, "delta")
    if n_samples < 1:
        raise UsageError("n_samples must be >= 1")
    code = _event_code(event)
    master = _as_seed(seed).master
    ka, kb = Seed(master, "primary").keys, Seed(master, "reinforcement").keys
    hits = 0
    for first, size in _chunks(first_replica, n_samples):
        hits += int(K.batch_sdp_event(g.indptr, g.indices, g.boundary_mask, g.origin,
                                      *ka, *kb, first, size, p, delta, code).sum())
    return binomial_estimate(hits, n_samples, p=p, delta=delta, event=event,
                             seed=master, first_replica=first_replica)


def sdp_thresholds(g: FiniteGraph, p: float, n_samples: int, event: str = "origin",
                   seed=0, first_replica: int = 0) -> np.ndarray:
    """Per replica, the least delta at which ``event`` holds for Phi(p, delta).

    The fraction of replicas with threshold <= delta is exactly the
    ``estimate_theta`` frequency at delta on the same replicas.
    """
    _require_boundary(g)
    p = check_probability(p)
    code = _event_code(event)
    master = _as_seed(seed).master
    ka, kb = Seed(master, "primary").keys, Seed(master, "reinforcement").keys
    out = [K.batch_sdp_threshold(g.indptr, g.indices, g.boundary_mask, g.origin,
                                 *ka, *kb, first, size, p, _tree_order(g), code)
           for first, size in _chunks(first_replica, n_samples)]
    return np.concatenate(out)


def critical_level(g: FiniteGraph, p_c_ref: float | None = None) -> float:
    """Origin-crossing probability of plain Bernoulli percolation at the
    reference threshold, for rooted trees (exact, from the recursion)."""
    if g.family != "rooted_tree":
        raise UsageError(f"critical level is only available for rooted trees, not {g.key}")
    b, L = g.params["b"], g.params["L"]
    return tree_theta_depth(b, tree_pc(b) if p_c_ref is None else p_c_ref, L)


def resolve_level(g: FiniteGraph, eps, p_c_ref: float | None = None) -> float:
    if eps == "critical":
        return critical_level(g, p_c_ref)
    eps = float(eps)
    if not 0 < eps < 1:
        raise UsageError(f"eps={eps} must be in (0, 1)")
    return eps


def estimate_delta_c(g: FiniteGraph, p: float, method: str = "eps-level", eps="critical",
                     n_samples: int = 10_000, tol: float = 0.01, event: str = "origin", seed=0,
                     search: str = "quantile", g_other: FiniteGraph | None = None,
                     exponent: float = 1.0, grid_step: float = 0.002,
                     first_replica: int = 0) -> EstimateCI:
    """Finite-volume critical reinforcement threshold at fixed p.

    ``eps-level`` finds the delta where the event frequency reaches ``eps``
    (``"critical"`` means the plain-Bernoulli origin frequency at the
    reference threshold, see ``critical_level``). With
    ``search="quantile"`` every replica contributes its own crossing value
    and the answer is their ``eps``-quantile with an order-statistic
    interval; ``search="bisection"`` bisects on delta with fresh replicas at
    each probe, stopping when the bracket is narrower than ``tol``.

    ``size-crossing`` (experimental) returns the delta at which
    ``L^exponent * theta_L`` curves of ``g`` and the deeper ``g_other``
    meet; trees need the scaling since unscaled curves never cross.
    """
    p = check_probability(p)
    master = _as_seed(seed).master
    if method == "size-crossing":
        if g_other is None:
            raise UsageError("size-crossing needs a second truncation g_other")
        depths = (g.params["L"], g_other.params["L"])
        if depths[0] >= depths[1]:
            raise UsageError("g_other must be the deeper truncation")
        samples = [sdp_thresholds(h, p, n_samples, event, master, first_replica) for h in (g, g_other)]
        grid = np.arange(0.0, 1.0 + grid_step / 2, grid_step)
        est = finite_size_threshold(depths, samples, grid, "crossing", exponent, seed=master)
        est.meta.update(p=p, event=event, method=method, exponent=exponent, seed=master)
        return est
    if method != "eps-level":
        raise UsageError(f"unknown method {method!r}")

    level = resolve_level(g, eps)
    meta = dict(p=p, event=event, method=method, eps=level, search=search, seed=master)
    if search == "quantile":
        thresholds = sdp_thresholds(g, p, n_samples, event, master, first_replica)
        # bracket check: frequency at delta=0 and delta=1
        f0 = np.mean(thresholds <= 0.0)
        f1 = np.mean(thresholds <= 1.0)
        if not f0 < level <= f1:
            raise BracketError(f"no bracket: frequency {f0:.4g} at delta=0, {f1:.4g} at delta=1, eps {level:.4g}")
        est = quantile_estimate(thresholds, level, **meta)
        return est
    if search != "bisection":
        raise UsageError(f"unknown search {search!r}")

    def probe(delta, step):
        return estimate_theta(g, p, delta, n_samples, event, master,
                              first_replica=first_replica + step * n_samples)

    lo, hi, history = bisect_level(probe, 0.0, 1.0, level, tol)
    mid = 0.5 * (lo + hi)
    # statistical width: frequency noise at the crossing over the local slope
    h = max(2 * tol, 0.02)
    step = len(history)
    up, down = probe(min(mid + h, 1.0), step), probe(max(mid - h, 0.0), step + 1)
    slope = (up.value - down.value) / (min(mid + h, 1.0) - max(mid - h, 0.0))
    half = 0.5 * (hi - lo)
    se = np.sqrt(level * (1 - level) / n_samples) / slope if slope > 0 else np.inf
    half = max(half, Z95 * se)
    meta.update(bracket=(lo, hi), probes=len(history) + 2)
    return EstimateCI(mid, float(se), n_samples, max(mid - half, 0.0), min(mid + half, 1.0), meta)


def removed_graph_threshold(g: FiniteGraph, p: float, n_samples: int, tol: float = 1e-3, eps="critical",
                            seed=0, min_eligible: int = 20, inner_samples: int | None = None,
                            first_replica: int = 0) -> EstimateCI:
    """Threshold of Bernoulli percolation on the graph with omega_p's
    boundary-touching clusters deleted.

    Per replica: delete the clusters, and if the origin can still reach the
    boundary, find the q at which its crossing probability on what is left
    reaches ``eps`` (exactly by recursion on trees, otherwise from
    ``inner_samples`` fresh patterns). The estimate is the mean over
    eligible replicas; ``meta["eligible"]`` is their fraction.
    """
    _require_boundary(g)
    p = check_probability(p)
    level = resolve_level(g, eps)
    master = _as_seed(seed).master
    ka, kb = Seed(master, "primary").keys, Seed(master, "reinforcement").keys
    out = []
    for first, size in _chunks(first_replica, n_samples):
        if _tree_order(g) and inner_samples is None:
            out.append(K.batch_removed_crossing(g.indptr, g.indices, g.boundary_mask, g.origin,
                                                *ka, first, size, p, level, tol))
        else:
            out.append(K.batch_removed_crossing_mc(g.indptr, g.indices, g.boundary_mask, g.origin,
                                                   *ka, *kb, first, size, p, level, inner_samples or 200))
    q = np.concatenate(out)
    ok = np.isfinite(q)
    n_ok = int(ok.sum())
    if n_ok < min_eligible:
        raise BracketError(
            f"origin cut off from the boundary in {n_samples - n_ok} of {n_samples} replicas "
            f"(need {min_eligible} eligible)"
        )
    return mean_estimate(q[ok], p=p, eps=level, eligible=n_ok / n_samples, seed=master,
                         first_replica=first_replica)


def fresh_birth_probe(g: FiniteGraph, seed, p: float, delta: float, n_samples: int,
                      p_c_ref: float | None = None, event: str = "any") -> EstimateCI:
    """Frequency of ``event`` in {label <= p_c_ref + delta} minus the
    boundary clusters of {label <= p}, both read off the same field."""
    _require_boundary(g)
    p = check_probability(p)
    delta = check_probability(delta, "delta")
    if p_c_ref is None:
        if g.family != "rooted_tree":
            raise UsageError("p_c_ref is required for graphs other than rooted trees")
        p_c_ref = tree_pc(g.params["b"])
    p_hi = p_c_ref + delta
    if p > p_hi + 1e-12:
        raise UsageError(f"p={p} exceeds p_c_ref + delta = {p_hi}: omega_p would not be a subset")
    p_hi = min(p_hi, 1.0)
    code = _event_code(event)
    s = _as_seed(seed)
    k = s.keys
    hits = 0
    for first, size in _chunks(s.replica, n_samples):
        hits += int(K.batch_fresh_birth(g.indptr, g.indices, g.boundary_mask, g.origin,
                                        *k, first, size, p, p_hi, code).sum())
    return binomial_estimate(hits, n_samples, p=p, delta=delta, p_c_ref=p_c_ref, event=event,
                             seed=s.master)


def fresh_birth_configuration(g: FiniteGraph, seed: Seed, p: float, p_hi: float) -> Configuration:
    """The set {label <= p_hi} minus the boundary clusters of {label <= p} for one field."""
    f = sample_field(g, seed)
    return level_set(f, p_hi) - destroyed_set(g, level_set(f, p))
