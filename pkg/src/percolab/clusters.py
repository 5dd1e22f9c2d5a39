"""Cluster labeling of open patterns and the boundary-touching proxy for
infinite clusters."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .errors import UsageError
from .estimate import EstimateCI, binomial_estimate, finite_size_threshold
from .fields import Configuration, LabelField, check_probability, stream_keys
from .graphs import FiniteGraph

STATISTICS = {
    "origin-percolates": K.STAT_ORIGIN,
    "n_infinite": K.STAT_N_INFINITE,
    "density": K.STAT_DENSITY,
}


@dataclass(frozen=True, eq=False)
class ClusterLabeling:
    component_id: np.ndarray  # -1 for closed vertices
    sizes: np.ndarray
    touches_boundary: np.ndarray
    n_infinite: int
    graph_key: str
    source: np.ndarray  # mask that was labeled

    @property
    def n_components(self) -> int:
        return len(self.sizes)

    def clusters(self) -> list[list[int]]:
        out = [[] for _ in range(self.n_components)]
        for v in np.flatnonzero(self.component_id >= 0):
            out[self.component_id[v]].append(int(v))
        return out

    def same_cluster(self, u: int, v: int) -> bool:
        cu = self.component_id[u]
        return bool(cu >= 0 and cu == self.component_id[v])


def label_clusters(g: FiniteGraph, omega: Configuration) -> ClusterLabeling:
    if omega.graph_key != g.key:
        raise UsageError(f"configuration is on {omega.graph_key}, not {g.key}")
    comp, ncomp = K.components(g.indptr, g.indices, omega.mask)
    sizes, touches = K.component_stats(comp, ncomp, g.boundary_mask)
    return ClusterLabeling(comp, sizes, touches, int(touches.sum()), g.key, omega.mask)


def infinite_proxy(labeling: ClusterLabeling, omega: Configuration) -> Configuration:
    """Open vertices whose cluster touches the truncation boundary."""
    if labeling.graph_key != omega.graph_key or not np.array_equal(labeling.source, omega.mask):
        raise UsageError("labeling was not computed from this configuration")
    comp = labeling.component_id
    mask = np.zeros(len(comp), dtype=bool)
    is_open = comp >= 0
    mask[is_open] = labeling.touches_boundary[comp[is_open]]
    return Configuration(mask, omega.graph_key)


def count_infinite(labeling: ClusterLabeling) -> int:
    return labeling.n_infinite


def destroyed_set(g: FiniteGraph, omega: Configuration) -> Configuration:
    """Shorthand for ``infinite_proxy(label_clusters(g, omega), omega)``."""
    return infinite_proxy(label_clusters(g, omega), omega)


def statistic(g: FiniteGraph, omega: Configuration, name: str) -> float:
    """One sweep statistic evaluated directly on a configuration."""
    lab = label_clusters(g, omega)
    if name == "origin-percolates":
        c = lab.component_id[g.origin]
        return 1.0 if c >= 0 and lab.touches_boundary[c] else 0.0
    if name == "n_infinite":
        return float(lab.n_infinite)
    if name == "density":
        return int(lab.sizes[lab.touches_boundary].sum()) / g.vertex_count
    raise UsageError(f"unknown statistic {name!r}; expected one of {list(STATISTICS)}")


def _check_grid(grid) -> np.ndarray:
    grid = np.asarray(grid, dtype=np.float64).ravel()
    if np.any(grid < 0) or np.any(grid > 1):
        raise UsageError("sweep grid must lie in [0, 1]")
    if np.any(np.diff(grid) < 0):
        raise UsageError("sweep grid must be ascending")
    return grid


def sweep_curve(g: FiniteGraph, f: LabelField, grid, stat: str = "origin-percolates") -> list[tuple[float, float]]:
    """Statistic of every level set in ``grid`` from a single insertion pass."""
    if stat not in STATISTICS:
        raise UsageError(f"unknown statistic {stat!r}; expected one of {list(STATISTICS)}")
    grid = _check_grid(grid)
    values = K.sweep(g.indptr, g.indices, g.boundary_mask, g.origin,
                     np.ascontiguousarray(f.labels), grid, STATISTICS[stat])
    return list(zip(grid.tolist(), values.tolist()))


def sweep_replicas(g: FiniteGraph, master: int, first: int, count: int, grid, stat: str = "origin-percolates",
                   stream: str = "primary") -> np.ndarray:
    """``sweep_curve`` for ``count`` consecutive replicas; returns a (count, len(grid)) array."""
    if stat not in STATISTICS:
        raise UsageError(f"unknown statistic {stat!r}")
    grid = _check_grid(grid)
    k1, k2 = stream_keys(master, stream)
    return K.batch_sweep(g.indptr, g.indices, g.boundary_mask, g.origin,
                         k1, k2, first, count, grid, STATISTICS[stat])


# ---------------------------------------------------------------------------
# plain Bernoulli estimators

EVENTS = {"origin": K.EVENT_ORIGIN, "any": K.EVENT_ANY}


def estimate_percolation(g: FiniteGraph, p: float, n_samples: int, event: str = "origin",
                         seed: int = 0, first_replica: int = 0) -> EstimateCI:
    """Frequency over replicas that {label <= p} has the origin in a
    boundary cluster (``origin``) or has any boundary cluster (``any``)."""
    if event not in EVENTS:
        raise UsageError(f"unknown event {event!r}")
    if not g.boundary_mask.any():
        raise UsageError(f"{g.key} has an empty boundary: no infinity proxy")
    p = check_probability(p)
    k1, k2 = stream_keys(int(seed), "primary")
    hits = K.batch_level_event(g.indptr, g.indices, g.boundary_mask, g.origin, k1, k2,
                               first_replica, n_samples, p, EVENTS[event])
    return binomial_estimate(int(hits.sum()), n_samples, p=p, event=event, seed=int(seed),
                             first_replica=first_replica)


def origin_thresholds(g: FiniteGraph, seed: int, first: int, count: int, stream: str = "primary") -> np.ndarray:
    """Per replica, the least p at which the origin joins a boundary cluster
    (``inf`` if it never does). The empirical distribution function of
    these values is the origin-percolates sweep averaged over replicas."""
    k1, k2 = stream_keys(int(seed), stream)
    tree = g.family in ("rooted_tree", "regular_tree")
    return K.batch_origin_threshold(g.indptr, g.indices, g.boundary_mask, g.origin, k1, k2,
                                    first, count, tree)


def finite_size_pc(graphs, n_samples: int, seed: int = 0, method: str = "curvature", grid=None,
                   first_replica: int = 0, n_boot: int = 200) -> EstimateCI:
    """Threshold localized from origin-percolation curves at several depths.

    ``graphs`` are truncations of one family at increasing depth L. Vertex
    ids of rooted and regular trees are breadth-first, so a shallower
    truncation is a prefix of a deeper one and replica r shares its labels
    across depths (coupled curves).
    """
    graphs = list(graphs)
    depths = [h.params["L"] for h in graphs]
    if any(a >= b for a, b in zip(depths, depths[1:])):
        raise UsageError("graphs must have strictly increasing depth")
    grid = np.arange(0.0, 1.0005, 0.001) if grid is None else _check_grid(grid)
    samples = [origin_thresholds(h, seed, first_replica, n_samples) for h in graphs]
    est = finite_size_threshold(depths, samples, grid, method, seed=int(seed), n_boot=n_boot)
    est.meta.update(seed=int(seed), first_replica=first_replica)
    return est
