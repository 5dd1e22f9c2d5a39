"""Finite-volume versions of the mass-transport machinery: transport sums on
finite transitive graphs, vanishing-density sequences Gamma_n, encounter
points, the nearest-encounter-point forest and its restriction, the
forest boundary inequality, and the xi construction for a single
boundary-touching cluster.

Readings fixed here (also written into CLI output headers):

* distances used to pick nearest encounter points are measured inside the
  open subgraph;
* dK_n(o) is the set of members of K_n(o) with a forest neighbour outside
  K_n(o); K_n(o) always contains o itself when o is an encounter point,
  even if o is in Gamma_n (then it is isolated).
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import Callable

import numpy as np
from numba import njit, prange
from numba.typed import List

from . import _kernels as K
from .clusters import destroyed_set, label_clusters, origin_thresholds
from .errors import InvarianceError, RegimeError, UsageError
from .estimate import EstimateCI, binomial_estimate
from .fields import Configuration, LabelField, Seed, level_set, sample_field
from .graphs import FiniteGraph, acts_transitively, group_closure

AMBIGUITY_FLAGS = {
    "forest_distance": "open-subgraph",
    "boundary_of_K": "members-of-K-with-F-neighbour-outside",
}


# ---------------------------------------------------------------------------
# mass transport


@dataclass(frozen=True)
class TransportFunction:
    evaluator: Callable[[int, int], float]
    invariance_group: tuple = ()

    def matrix(self, n: int) -> np.ndarray:
        return np.array([[self.evaluator(u, v) for v in range(n)] for u in range(n)], dtype=float)


def random_invariant_transport(g: FiniteGraph, rng: np.random.Generator, zero_fraction: float = 0.3,
                               group=None) -> TransportFunction:
    """A random nonnegative f(u, v) constant on orbits of vertex pairs under
    the group generated by ``g.automorphisms``."""
    if group is None:
        group = group_closure(g.automorphisms or [])
    n = g.vertex_count
    orbit = np.full((n, n), -1, dtype=np.int64)
    count = 0
    for u in range(n):
        for v in range(n):
            if orbit[u, v] >= 0:
                continue
            for h in group:
                orbit[h[u], h[v]] = count
            orbit[u, v] = count
            count += 1
    weights = rng.exponential(size=count) * (rng.random(count) >= zero_fraction)
    table = weights[orbit]
    table.setflags(write=False)
    return TransportFunction(lambda u, v: float(table[u, v]), tuple(g.automorphisms or ()))


def check_invariance(g: FiniteGraph, f: TransportFunction, tol: float = 1e-12) -> np.ndarray:
    """Exhaustive check f(hu, hv) = f(u, v) over the generators; returns the matrix."""
    t = f.matrix(g.vertex_count)
    for gi, perm in enumerate(f.invariance_group or g.automorphisms or ()):
        moved = t[np.ix_(perm, perm)]
        bad = np.argwhere(np.abs(moved - t) > tol * np.maximum(1.0, np.abs(t)))
        if len(bad):
            u, v = (int(x) for x in bad[0])
            raise InvarianceError(
                f"transport not invariant under automorphism {gi}: f({perm[u]}, {perm[v]}) != f({u}, {v})",
                gi, u, v,
            )
    return t


def mtp_check(g: FiniteGraph, f: TransportFunction) -> tuple[float, float]:
    """Mass sent out of and received at the origin: (sum_x f(o, x), sum_x f(x, o))."""
    if not acts_transitively(g):
        raise UsageError(f"{g.key}: listed automorphisms do not act transitively")
    t = check_invariance(g, f)
    o = g.origin
    return math.fsum(t[o, :]), math.fsum(t[:, o])


# ---------------------------------------------------------------------------
# Gamma_n


@dataclass(frozen=True, eq=False)
class GammaSequence:
    configs: list
    descriptor: str
    levels: tuple = ()
    origin_probability: tuple = ()  # EstimateCI per n, when estimated


def destroyed_at_levels(n_max: int, p_ref: float = 0.5, scale: float = 0.2) -> list[float]:
    """p_n = p_ref + scale / n for n = 1..n_max."""
    return [p_ref + scale / n for n in range(1, n_max + 1)]


def make_gamma_sequence(g: FiniteGraph, rule: str, field: LabelField | None = None, levels=None,
                        configs=None, n_samples: int = 0, seed=None) -> GammaSequence:
    """``destroyed-at``: Gamma_n = boundary clusters of {label <= levels[n]} on
    ``field``; ``explicit``: the given ``configs``. With ``n_samples`` the
    probability that the origin is in Gamma_n is estimated over that many
    replicas (coupled across n through the same labels)."""
    if rule == "explicit":
        if configs is None:
            raise UsageError("explicit rule needs configs")
        return GammaSequence(list(configs), "explicit")
    if rule != "destroyed-at":
        raise UsageError(f"unknown gamma rule {rule!r}")
    if field is None or levels is None:
        raise UsageError("destroyed-at rule needs a field and levels")
    levels = tuple(float(x) for x in levels)
    if any(b > a for a, b in zip(levels, levels[1:])):
        raise UsageError("levels must be nonincreasing")
    gammas = [destroyed_set(g, level_set(field, pn)) for pn in levels]
    probs = ()
    if n_samples:
        s = field.seed if seed is None else seed
        thr = origin_thresholds(g, s.master, s.replica, n_samples, s.stream)
        probs = tuple(binomial_estimate(int((thr <= pn).sum()), n_samples, level=pn) for pn in levels)
    return GammaSequence(gammas, f"destroyed-at{levels}", levels, probs)


# ---------------------------------------------------------------------------
# encounter points and the forest


@njit(cache=True)
def _encounter_points(indptr, indices, boundary, mask):
    n = mask.shape[0]
    inf, _ = K.infinite_mask(indptr, indices, boundary, mask)
    disc = np.full(n, -1, dtype=np.int64)
    low = np.zeros(n, dtype=np.int64)
    parent = np.full(n, -1, dtype=np.int64)
    subb = np.zeros(n, dtype=np.int64)
    sep_b = np.zeros(n, dtype=np.int64)
    sep_touch = np.zeros(n, dtype=np.int64)
    stack_v = np.empty(n, dtype=np.int64)
    stack_e = np.empty(n, dtype=np.int64)
    visit = np.empty(n, dtype=np.int64)
    out = np.zeros(n, dtype=np.bool_)
    timer = 0
    for s in range(n):
        if not inf[s] or disc[s] >= 0:
            continue
        nvis = 0
        disc[s] = timer
        low[s] = timer
        timer += 1
        subb[s] = 1 if boundary[s] else 0
        visit[nvis] = s
        nvis += 1
        top = 0
        stack_v[0] = s
        stack_e[0] = indptr[s]
        while top >= 0:
            u = stack_v[top]
            e = stack_e[top]
            if e < indptr[u + 1]:
                stack_e[top] = e + 1
                w = indices[e]
                if not mask[w]:
                    continue
                if disc[w] < 0:
                    parent[w] = u
                    disc[w] = timer
                    low[w] = timer
                    timer += 1
                    subb[w] = 1 if boundary[w] else 0
                    visit[nvis] = w
                    nvis += 1
                    top += 1
                    stack_v[top] = w
                    stack_e[top] = indptr[w]
                elif w != parent[u] and disc[w] < low[u]:
                    low[u] = disc[w]
            else:
                top -= 1
                if top >= 0:
                    pu = stack_v[top]
                    if low[u] < low[pu]:
                        low[pu] = low[u]
                    subb[pu] += subb[u]
                    if low[u] >= disc[pu]:
                        # removing pu cuts u's subtree off as its own piece
                        sep_b[pu] += subb[u]
                        if subb[u] > 0:
                            sep_touch[pu] += 1
        total = subb[s]
        for i in range(nvis):
            v = visit[i]
            cnt = sep_touch[v]
            if v != s:
                rest = total - sep_b[v] - (1 if boundary[v] else 0)
                if rest > 0:
                    cnt += 1
            out[v] = cnt >= 3
    return out


@njit(cache=True, inline="always")
def _tfind(parent, x):
    while parent[x] != x:
        parent[x] = parent[parent[x]]
        x = parent[x]
    return x


@njit(cache=True)
def _better(d1, x1, i1, d2, x2, i2):
    if d1 != d2:
        return d1 < d2
    if x1 != x2:
        return x1 < x2
    return i1 < i2


@njit(cache=True)
def _forest_choices(indptr, indices, mask, enc, x, sources, tree_like, dist, tag, queue):
    """Edges {v, u(Z, v)} for every v in ``sources`` (all encounter points).

    ``dist``/``tag``/``queue`` are scratch arrays of length n, ``dist`` and
    ``tag`` filled with -1; they are restored before returning.
    """
    out_a = List.empty_list(np.int64)
    out_b = List.empty_list(np.int64)
    for v in sources:
        start = indptr[v]
        deg = indptr[v + 1] - start
        tparent = np.arange(deg)
        best_d = np.full(deg, np.iinfo(np.int64).max)
        best_x = np.full(deg, np.inf)
        best_i = np.full(deg, -1, dtype=np.int64)
        head = 0
        tail = 0
        dist[v] = 0
        for j in range(deg):
            w = indices[start + j]
            if mask[w]:
                dist[w] = 1
                tag[w] = j
                queue[tail] = w
                tail += 1
        while head < tail:
            u = queue[head]
            head += 1
            tu = _tfind(tparent, tag[u])
            if enc[u]:
                if _better(dist[u], x[u], u, best_d[tu], best_x[tu], best_i[tu]):
                    best_d[tu] = dist[u]
                    best_x[tu] = x[u]
                    best_i[tu] = u
                if tree_like:
                    continue
            if tree_like and best_i[tu] >= 0 and dist[u] >= best_d[tu]:
                continue
            for j in range(indptr[u], indptr[u + 1]):
                w = indices[j]
                if w == v or not mask[w]:
                    continue
                if dist[w] < 0:
                    dist[w] = dist[u] + 1
                    tag[w] = tag[u]
                    queue[tail] = w
                    tail += 1
                else:
                    a = _tfind(tparent, tag[u])
                    b = _tfind(tparent, tag[w])
                    if a != b:
                        tparent[b] = a
                        if _better(best_d[b], best_x[b], best_i[b], best_d[a], best_x[a], best_i[a]):
                            best_d[a] = best_d[b]
                            best_x[a] = best_x[b]
                            best_i[a] = best_i[b]
        for j in range(deg):
            if _tfind(tparent, j) == j and best_i[j] >= 0:
                out_a.append(v)
                out_b.append(best_i[j])
        dist[v] = -1
        for k in range(tail):
            dist[queue[k]] = -1
            tag[queue[k]] = -1
    return out_a, out_b


def _scratch(n):
    return np.full(n, -1, dtype=np.int64), np.full(n, -1, dtype=np.int64), np.empty(n, dtype=np.int64)


def _is_tree(g: FiniteGraph) -> bool:
    return g.edge_count == g.vertex_count - 1 and g.family in ("rooted_tree", "regular_tree")


def find_encounter_points(g: FiniteGraph, omega: Configuration) -> Configuration:
    """Open vertices in a boundary-touching cluster whose removal leaves at
    least three boundary-touching pieces, each containing a neighbour."""
    if omega.graph_key != g.key:
        raise UsageError("configuration is on a different graph")
    return Configuration(_encounter_points(g.indptr, g.indices, g.boundary_mask, omega.mask), g.key)


@dataclass(frozen=True, eq=False)
class Forest:
    Y: Configuration
    edges: np.ndarray  # (m, 2), u < v, sorted
    x_labels: np.ndarray

    def edge_set(self) -> set[tuple[int, int]]:
        return {(int(a), int(b)) for a, b in self.edges}

    def degrees(self) -> np.ndarray:
        deg = np.zeros(len(self.Y.mask), dtype=np.int64)
        np.add.at(deg, self.edges.ravel(), 1)
        return deg

    def degree_distribution(self) -> dict[int, int]:
        deg = self.degrees()[self.Y.mask]
        vals, counts = np.unique(deg, return_counts=True)
        return {int(a): int(b) for a, b in zip(vals, counts)}

    def neighbors(self, v: int) -> set[int]:
        hit = self.edges[(self.edges == v).any(axis=1)]
        return set(hit.ravel().tolist()) - {v}

    def is_acyclic(self) -> bool:
        parent = {}

        def find(a):
            while parent.setdefault(a, a) != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        for a, b in self.edges:
            ra, rb = find(int(a)), find(int(b))
            if ra == rb:
                return False
            parent[ra] = rb
        return True


def _edges_array(a, b) -> np.ndarray:
    if len(a) == 0:
        return np.zeros((0, 2), dtype=np.int64)
    e = np.column_stack([np.asarray(a), np.asarray(b)])
    e = np.sort(e, axis=1)
    return np.unique(e, axis=0)


def _x_array(g: FiniteGraph, x_labels) -> np.ndarray:
    if isinstance(x_labels, LabelField):
        return np.ascontiguousarray(x_labels.labels)
    if isinstance(x_labels, Seed):
        return np.ascontiguousarray(sample_field(g, x_labels).labels)
    return np.ascontiguousarray(np.asarray(x_labels, dtype=float))


def build_forest(g: FiniteGraph, omega: Configuration, x_labels) -> Forest:
    """Join each encounter point v to the nearest encounter point (lowest x
    on ties) in every boundary-touching piece of omega minus v.

    ``x_labels`` may be an array, a LabelField or a Seed (use the forest
    stream). Acyclicity is not assumed: see ``Forest.is_acyclic``.
    """
    enc = find_encounter_points(g, omega)
    x = _x_array(g, x_labels)
    sources = enc.members.astype(np.int64)
    dist, tag, queue = _scratch(g.vertex_count)
    a, b = _forest_choices(g.indptr, g.indices, omega.mask, enc.mask, x, sources, _is_tree(g),
                           dist, tag, queue)
    return Forest(enc, _edges_array(list(a), list(b)), x)


def restrict_forest(forest: Forest, g: FiniteGraph, omega: Configuration, gamma: Configuration) -> Forest:
    """Keep forest edges whose ends lie in one cluster of omega minus gamma."""
    lab = label_clusters(g, omega - gamma)
    comp = lab.component_id
    e = forest.edges
    keep = (comp[e[:, 0]] >= 0) & (comp[e[:, 0]] == comp[e[:, 1]]) if len(e) else np.zeros(0, bool)
    return Forest(forest.Y, e[keep], forest.x_labels)


def k_boundary_flag(forest: Forest, g: FiniteGraph, omega: Configuration, gamma: Configuration, v: int) -> bool:
    """Whether v lies in dK(v): v is an encounter point with a forest
    neighbour outside the encounter points of its cluster of omega minus gamma."""
    if not forest.Y.mask[v]:
        return False
    nbrs = forest.neighbors(v)
    if gamma.mask[v]:
        return bool(nbrs)
    lab = label_clusters(g, omega - gamma)
    return any(not lab.same_cluster(v, u) for u in nbrs)


# ---------------------------------------------------------------------------
# boundary inequality


@njit(cache=True)
def _component_mask(indptr, indices, mask, root):
    n = mask.shape[0]
    seen = np.zeros(n, dtype=np.bool_)
    if not mask[root]:
        return seen
    stack = np.empty(n, dtype=np.int64)
    stack[0] = root
    top = 1
    seen[root] = True
    while top > 0:
        top -= 1
        u = stack[top]
        for j in range(indptr[u], indptr[u + 1]):
            w = indices[j]
            if mask[w] and not seen[w]:
                seen[w] = True
                stack[top] = w
                top += 1
    return seen


@njit(cache=True, parallel=True)
def _eq2_batch(indptr, indices, boundary, origin, k1, k2, kx1, kx2, first, count, p, levels, tree_like):
    n = boundary.shape[0]
    m = levels.shape[0]
    in_y = np.zeros(count, dtype=np.bool_)
    in_dk = np.zeros((count, m), dtype=np.bool_)
    in_gamma = np.zeros((count, m), dtype=np.bool_)
    degree = np.zeros(count, dtype=np.int64)
    for r in prange(count):
        lab = np.empty(n)
        K.fill_labels(k1, k2, first + r, lab)
        for i in range(m):
            gam, _ = K.infinite_mask(indptr, indices, boundary, lab <= levels[i])
            in_gamma[r, i] = gam[origin]
        omega = lab <= p
        enc = _encounter_points(indptr, indices, boundary, omega)
        if not enc[origin]:
            continue
        in_y[r] = True
        x = np.empty(n)
        K.fill_labels(kx1, kx2, first + r, x)
        # every forest edge at the origin comes from an encounter point of its cluster
        cluster = _component_mask(indptr, indices, omega, origin)
        cnt = 0
        for v in range(n):
            if cluster[v] and enc[v]:
                cnt += 1
        sources = np.empty(cnt, dtype=np.int64)
        cnt = 0
        for v in range(n):
            if cluster[v] and enc[v]:
                sources[cnt] = v
                cnt += 1
        dist = np.full(n, -1, dtype=np.int64)
        tag = np.full(n, -1, dtype=np.int64)
        queue = np.empty(n, dtype=np.int64)
        a, b = _forest_choices(indptr, indices, omega, enc, x, sources, tree_like, dist, tag, queue)
        nbr = np.zeros(n, dtype=np.bool_)
        for k in range(len(a)):
            if a[k] == origin:
                nbr[b[k]] = True
            elif b[k] == origin:
                nbr[a[k]] = True
        deg = 0
        for v in range(n):
            if nbr[v]:
                deg += 1
        degree[r] = deg
        for i in range(m):
            if in_gamma[r, i]:
                in_dk[r, i] = deg > 0
                continue
            gam, _ = K.infinite_mask(indptr, indices, boundary, lab <= levels[i])
            reach = _component_mask(indptr, indices, omega & ~gam, origin)
            for v in range(n):
                if nbr[v] and not reach[v]:
                    in_dk[r, i] = True
                    break
    return in_y, in_dk, in_gamma, degree


def boundary_inequality_stats(g: FiniteGraph, seed, p: float, levels, n_samples: int,
                              first_replica: int = 0) -> list[dict]:
    """Monte Carlo check of P[o in Y] <= 2 P[o in Y, o in dK_n(o)] for
    Gamma_n = boundary clusters of {label <= levels[n]} on the same field
    as omega_p, forest labels from the forest stream.

    Returns one record per level with ``lhs``, ``rhs``, ``gamma`` (P[o in
    Gamma_n]) estimates, ``margin_sigma`` (stderr of lhs - 2 rhs from the
    paired indicators) and ``holds`` (lhs <= 2 rhs + 3 sigma).
    """
    s = seed if isinstance(seed, Seed) else Seed(int(seed))
    levels = np.asarray(levels, dtype=float)
    if not g.boundary_mask.any():
        raise UsageError(f"{g.key} has an empty boundary")
    k = Seed(s.master, "primary").keys
    kx = Seed(s.master, "forest").keys
    in_y, in_dk, in_gamma, _ = _eq2_batch(g.indptr, g.indices, g.boundary_mask, g.origin, *k, *kx,
                                          first_replica, n_samples, float(p), levels, _is_tree(g))
    out = []
    for i, pn in enumerate(levels):
        lhs = binomial_estimate(int(in_y.sum()), n_samples)
        rhs = binomial_estimate(int((in_y & in_dk[:, i]).sum()), n_samples)
        d = in_y.astype(float) - 2.0 * (in_y & in_dk[:, i])
        sigma = float(d.std(ddof=1) / math.sqrt(n_samples)) if n_samples > 1 else math.inf
        out.append({
            "level": float(pn),
            "lhs": lhs,
            "rhs": rhs,
            "gamma": binomial_estimate(int(in_gamma[:, i].sum()), n_samples),
            "margin_sigma": sigma,
            "holds": bool(lhs.value <= 2 * rhs.value + 3 * sigma),
        })
    return out


# ---------------------------------------------------------------------------
# xi construction


def build_xi(g: FiniteGraph, omega: Configuration, gamma: Configuration, n: int) -> Configuration:
    """Vertices within graph distance ``n`` of the unique boundary-touching
    cluster U whose own and neighbours' nearest points of U all lie in a
    single cluster of omega minus gamma."""
    lab = label_clusters(g, omega)
    if lab.n_infinite != 1:
        raise RegimeError(f"need exactly one boundary-touching cluster, found {lab.n_infinite}")
    if n < 0:
        raise UsageError("radius n must be >= 0")
    c = int(np.flatnonzero(lab.touches_boundary)[0])
    u_mask = lab.component_id == c
    dist = g.distances_from(np.flatnonzero(u_mask))
    comp = label_clusters(g, omega - gamma).component_id

    # components hit by the nearest points of U, propagated along shortest paths
    order = np.argsort(dist, kind="stable")
    near = [None] * g.vertex_count
    for v in order:
        v = int(v)
        if dist[v] < 0:
            near[v] = frozenset([-1])
        elif dist[v] == 0:
            near[v] = frozenset([int(comp[v])])
        else:
            acc = set()
            for w in g.neighbors(v):
                if dist[w] == dist[v] - 1:
                    acc |= near[int(w)]
            near[v] = frozenset(acc)
    members = []
    for v in range(g.vertex_count):
        if dist[v] < 0 or dist[v] > n:
            continue
        hit = set(near[v])
        for w in g.neighbors(v):
            hit |= near[int(w)]
        if len(hit) == 1 and -1 not in hit:
            members.append(v)
    return Configuration.from_vertices(g, members)


def nearest_points(g: FiniteGraph, u_mask: np.ndarray, v: int) -> set[int]:
    """Vertices of U minimising graph distance to v (direct search)."""
    dist = g.distances_from(v)
    reach = dist[u_mask & (dist >= 0)]
    if not len(reach):
        return set()
    return set(np.flatnonzero(u_mask & (dist == reach.min())).tolist())
