"""Finite truncations of the graph families used in the experiments.

Vertex ids are dense integers with a fixed construction order:

* trees: root first, breadth first, children in increasing id order;
* tree x cycle products: lexicographic in (tree vertex, cycle position);
* tori: row major in the coordinates.

The truncation frontier ``boundary`` stands in for "infinity" everywhere
downstream: a cluster is treated as infinite iff it touches the boundary.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import product

import numpy as np

from .errors import ResourceLimitError, UsageError

DEFAULT_MAX_VERTICES = 1 << 24

FAMILY_ALIASES = {
    "tree": "rooted_tree",
    "rtree": "regular_tree",
    "torus": "torus",
    "treecycle": "tree_cycle",
}


@dataclass(frozen=True, eq=False)
class FiniteGraph:
    """Immutable finite graph in CSR form with a marked boundary and origin."""

    indptr: np.ndarray
    indices: np.ndarray
    boundary_mask: np.ndarray
    origin: int
    family: str
    params: dict = field(default_factory=dict)
    automorphisms: list | None = None

    def __post_init__(self):
        for arr in (self.indptr, self.indices, self.boundary_mask):
            arr.setflags(write=False)
        if self.automorphisms is not None:
            for perm in self.automorphisms:
                perm.setflags(write=False)

    @property
    def vertex_count(self) -> int:
        return len(self.indptr) - 1

    @property
    def edge_count(self) -> int:
        return len(self.indices) // 2

    @property
    def boundary(self) -> np.ndarray:
        return np.flatnonzero(self.boundary_mask)

    @property
    def key(self) -> str:
        args = ",".join(f"{k}={v}" for k, v in self.params.items())
        return f"{self.family}({args})"

    def neighbors(self, v: int) -> np.ndarray:
        return self.indices[self.indptr[v]:self.indptr[v + 1]]

    def degree(self, v: int | None = None):
        deg = np.diff(self.indptr)
        return deg if v is None else int(deg[v])

    def adjacency_lists(self) -> list[list[int]]:
        return [self.neighbors(v).tolist() for v in range(self.vertex_count)]

    def edges(self) -> np.ndarray:
        """Edges as an (m, 2) array with u < v, sorted."""
        src = np.repeat(np.arange(self.vertex_count), np.diff(self.indptr))
        keep = src < self.indices
        return np.column_stack([src[keep], self.indices[keep]])

    def distances_from(self, sources, within=None) -> np.ndarray:
        """BFS distances from ``sources``; -1 where unreachable.

        If ``within`` (a boolean vertex mask) is given, the search only
        visits vertices inside it.
        """
        n = self.vertex_count
        dist = np.full(n, -1, dtype=np.int64)
        queue = deque()
        for s in np.atleast_1d(sources):
            s = int(s)
            if within is not None and not within[s]:
                continue
            if dist[s] < 0:
                dist[s] = 0
                queue.append(s)
        indptr, indices = self.indptr, self.indices
        while queue:
            u = queue.popleft()
            for w in indices[indptr[u]:indptr[u + 1]]:
                if dist[w] < 0 and (within is None or within[w]):
                    dist[w] = dist[u] + 1
                    queue.append(w)
        return dist

    def check_invariants(self) -> None:
        """Raise AssertionError if the adjacency or boundary is malformed."""
        n = self.vertex_count
        pairs = set()
        for v in range(n):
            nb = self.neighbors(v)
            assert np.all(np.diff(nb) > 0), f"neighbors of {v} not sorted/unique"
            assert v not in nb, f"self-loop at {v}"
            pairs.update((v, int(w)) for w in nb)
        assert all((w, v) in pairs for v, w in pairs), "adjacency not symmetric"
        assert self.boundary_mask.shape == (n,)
        assert 0 <= self.origin < n
        if self.boundary_mask[self.origin]:
            # only degenerate depth-0 truncations put the origin at infinity
            assert self.params.get("L", None) == 0 or n == 1
        for perm in self.automorphisms or ():
            assert is_automorphism(self, perm)


def _check_size(count: int, max_vertices: int) -> None:
    if count > max_vertices:
        raise ResourceLimitError(
            f"graph would have {count} vertices, over max_vertices={max_vertices}"
        )


def _from_edges(n, edges, boundary, origin, family, params, automorphisms=None):
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    src = np.concatenate([edges[:, 0], edges[:, 1]])
    dst = np.concatenate([edges[:, 1], edges[:, 0]])
    order = np.lexsort((dst, src))
    src, dst = src[order], dst[order]
    if len(src):
        dup = (np.diff(src) == 0) & (np.diff(dst) == 0)
        keep = np.concatenate([[True], ~dup])
        src, dst = src[keep], dst[keep]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(src, minlength=n), out=indptr[1:])
    mask = np.zeros(n, dtype=bool)
    mask[np.asarray(list(boundary), dtype=np.int64)] = True
    return FiniteGraph(
        indptr=indptr,
        indices=dst.astype(np.int64),
        boundary_mask=mask,
        origin=int(origin),
        family=family,
        params=dict(params),
        automorphisms=automorphisms,
    )


def from_edges(n: int, edges, boundary, origin: int = 0, name: str = "custom") -> FiniteGraph:
    """A hand-built graph (no automorphisms), mostly for worked examples."""
    arr = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if np.any(arr < 0) or np.any(arr >= n) or np.any(arr[:, 0] == arr[:, 1]):
        raise UsageError("edges must join two distinct vertices in range")
    return _from_edges(n, arr, boundary, origin, name, {"n": n, "m": len(arr)})


def rooted_tree_size(b: int, L: int) -> int:
    return L + 1 if b == 1 else (b ** (L + 1) - 1) // (b - 1)


def _rooted_tree_edges(b, L):
    n = rooted_tree_size(b, L)
    child = np.arange(1, n, dtype=np.int64)
    # breadth-first numbering: children of i are b*i+1 .. b*i+b
    return n, np.column_stack([(child - 1) // b, child])


def build_rooted_tree(b: int, L: int, max_vertices: int = DEFAULT_MAX_VERTICES) -> FiniteGraph:
    """Rooted ``b``-ary tree of depth ``L``; boundary is the depth-``L`` level."""
    if b < 1 or L < 0:
        raise UsageError(f"rooted tree needs b >= 1 and L >= 0, got b={b}, L={L}")
    n = rooted_tree_size(b, L)
    _check_size(n, max_vertices)
    n, edges = _rooted_tree_edges(b, L)
    first_leaf = n - b ** L
    return _from_edges(n, edges, range(first_leaf, n), 0, "rooted_tree", {"b": b, "L": L})


def regular_tree_size(d: int, L: int) -> int:
    return 1 + d * ((d - 1) ** L - 1) // (d - 2)


def build_regular_tree(d: int, L: int, max_vertices: int = DEFAULT_MAX_VERTICES) -> FiniteGraph:
    """Ball of radius ``L`` around a vertex of the ``d``-regular tree."""
    if d < 3 or L < 0:
        raise UsageError(f"regular tree needs d >= 3 and L >= 0, got d={d}, L={L}")
    n = regular_tree_size(d, L)
    _check_size(n, max_vertices)
    edges = []
    level = [0]
    nxt = 1
    for depth in range(L):
        new_level = []
        for v in level:
            for _ in range(d if depth == 0 else d - 1):
                edges.append((v, nxt))
                new_level.append(nxt)
                nxt += 1
        level = new_level
    assert nxt == n
    return _from_edges(n, edges, level, 0, "regular_tree", {"d": d, "L": L})


def build_torus(d: int, n: int, max_vertices: int = DEFAULT_MAX_VERTICES) -> FiniteGraph:
    """``d``-dimensional discrete torus of side ``n`` with translation generators."""
    if d < 1 or n < 3:
        raise UsageError(f"torus needs d >= 1 and n >= 3, got d={d}, n={n}")
    _check_size(n ** d, max_vertices)
    coords = np.array(list(product(range(n), repeat=d)), dtype=np.int64).reshape(-1, d)
    weights = n ** np.arange(d - 1, -1, -1, dtype=np.int64)
    ids = coords @ weights
    edges = []
    generators = []
    for axis in range(d):
        shifted = coords.copy()
        shifted[:, axis] = (shifted[:, axis] + 1) % n
        image = shifted @ weights
        edges.append(np.column_stack([ids, image]))
        perm = np.empty(n ** d, dtype=np.int64)
        perm[ids] = image
        generators.append(perm)
    return _from_edges(
        n ** d, np.concatenate(edges), [], 0, "torus", {"d": d, "n": n}, generators
    )


def build_tree_cycle(b: int, L: int, k: int, max_vertices: int = DEFAULT_MAX_VERTICES) -> FiniteGraph:
    """Product of ``rooted_tree(b, L)`` with a ``k``-cycle; vertex (t, c) has id t*k + c."""
    if b < 1 or L < 0 or k < 3:
        raise UsageError(f"tree x cycle needs b >= 1, L >= 0, k >= 3; got b={b}, L={L}, k={k}")
    nt = rooted_tree_size(b, L)
    _check_size(nt * k, max_vertices)
    nt, tree_edges = _rooted_tree_edges(b, L)
    c = np.arange(k, dtype=np.int64)
    t = np.arange(nt, dtype=np.int64)
    vertical = (tree_edges[:, None, :] * k + c[None, :, None]).reshape(-1, 2)
    ring = np.column_stack([
        (t[:, None] * k + c[None, :]).ravel(),
        (t[:, None] * k + (c[None, :] + 1) % k).ravel(),
    ])
    first_leaf = nt - b ** L
    boundary = range(first_leaf * k, nt * k)
    return _from_edges(
        nt * k, np.concatenate([vertical, ring]), boundary, 0, "tree_cycle",
        {"b": b, "L": L, "k": k},
    )


def make_graph(family: str, max_vertices: int = DEFAULT_MAX_VERTICES, **params) -> FiniteGraph:
    """Build a graph from a CLI/config family key (tree|rtree|torus|treecycle)."""
    name = FAMILY_ALIASES.get(family, family)
    builders = {
        "rooted_tree": (build_rooted_tree, ("b", "L")),
        "regular_tree": (build_regular_tree, ("d", "L")),
        "torus": (build_torus, ("d", "n")),
        "tree_cycle": (build_tree_cycle, ("b", "L", "k")),
    }
    if name not in builders:
        raise UsageError(f"unknown graph family {family!r}")
    builder, keys = builders[name]
    missing = [k for k in keys if k not in params]
    extra = [k for k in params if k not in keys]
    if missing or extra:
        raise UsageError(
            f"family {family!r} takes parameters {keys}; missing={missing}, unexpected={extra}"
        )
    return builder(*(int(params[k]) for k in keys), max_vertices=max_vertices)


def is_automorphism(g: FiniteGraph, perm) -> bool:
    """Exhaustively check that ``perm`` maps the edge set onto itself."""
    perm = np.asarray(perm)
    n = g.vertex_count
    if perm.shape != (n,) or not np.array_equal(np.sort(perm), np.arange(n)):
        return False
    e = g.edges()
    mapped = np.sort(perm[e], axis=1)
    mapped = mapped[np.lexsort((mapped[:, 1], mapped[:, 0]))]
    return np.array_equal(mapped, e)


def group_closure(generators, limit: int = 100_000) -> list[np.ndarray]:
    """All elements of the permutation group generated by ``generators``."""
    generators = [np.asarray(g) for g in generators]
    if not generators:
        return []
    identity = np.arange(len(generators[0]))
    seen = {identity.tobytes(): identity}
    queue = deque([identity])
    while queue:
        h = queue.popleft()
        for gen in generators:
            comp = gen[h]
            key = comp.tobytes()
            if key not in seen:
                if len(seen) >= limit:
                    raise ResourceLimitError(f"group order exceeds limit={limit}")
                seen[key] = comp
                queue.append(comp)
    return list(seen.values())


def acts_transitively(g: FiniteGraph) -> bool:
    """True if the listed automorphisms move the origin onto every vertex."""
    if g.vertex_count == 1:
        return True
    if not g.automorphisms:
        return False
    reached = {g.origin}
    queue = deque([g.origin])
    while queue:
        u = queue.popleft()
        for perm in g.automorphisms:
            w = int(perm[u])
            if w not in reached:
                reached.add(w)
                queue.append(w)
    return len(reached) == g.vertex_count


# ---------------------------------------------------------------------------
# isoperimetry


@dataclass(frozen=True)
class IsoEntry:
    descriptor: str
    subset_size: int
    boundary_size: int
    ratio: Fraction


@dataclass(frozen=True)
class IsoProfile:
    entries: tuple[IsoEntry, ...]

    def ratios(self) -> list[Fraction]:
        return [e.ratio for e in self.entries]

    def minimum(self) -> Fraction:
        return min(self.ratios())


def inner_boundary(g: FiniteGraph, subset) -> np.ndarray:
    """Vertices of ``subset`` with at least one neighbor outside it."""
    inside = np.zeros(g.vertex_count, dtype=bool)
    inside[np.asarray(list(subset), dtype=np.int64)] = True
    src = np.repeat(np.arange(g.vertex_count), np.diff(g.indptr))
    leaking = inside[src] & ~inside[g.indices]
    return np.unique(src[leaking])


def _entry(g, descriptor, subset):
    subset = np.asarray(sorted(set(int(v) for v in subset)), dtype=np.int64)
    if len(subset) == 0:
        raise UsageError("isoperimetric subsets must be nonempty")
    nb = len(inner_boundary(g, subset))
    return IsoEntry(descriptor, len(subset), nb, Fraction(nb, len(subset)))


def _descendants(g, root, depth):
    """Full subtree below ``root`` down to relative ``depth`` (trees rooted at origin)."""
    dist = g.distances_from(g.origin)
    out = [root]
    frontier = [root]
    for _ in range(depth):
        frontier = [int(w) for u in frontier for w in g.neighbors(u) if dist[w] == dist[u] + 1]
        out.extend(frontier)
    return out


def isoperimetric_profile(g: FiniteGraph, family: str, subtree_root: int | None = None) -> IsoProfile:
    """Exact ``|inner boundary(W)| / |W|`` over a family of subsets ``W``.

    ``family`` is one of ``balls`` (balls around the origin, any graph),
    ``subtrees`` (full subtrees of a tree, rooted at ``subtree_root``,
    default the origin, kept strictly inside the truncation) or
    ``segments`` (paths of k consecutive vertices on a 1-d torus, 1 <= k < n).
    """
    entries = []
    if family in ("balls", "balls-around-origin"):
        dist = g.distances_from(g.origin)
        for r in range(int(dist.max()) + 1):
            entries.append(_entry(g, f"ball(r={r})", np.flatnonzero((dist >= 0) & (dist <= r))))
    elif family == "subtrees":
        if g.family not in ("rooted_tree", "regular_tree"):
            raise UsageError(f"subtree family needs a tree, got {g.key}")
        root = g.origin if subtree_root is None else int(subtree_root)
        dist = g.distances_from(g.origin)
        for depth in range(g.params["L"] - int(dist[root])):
            entries.append(_entry(g, f"subtree(root={root},depth={depth})", _descendants(g, root, depth)))
    elif family in ("segments", "path-segments"):
        if g.family != "torus" or g.params["d"] != 1:
            raise UsageError(f"path segments need a 1-d torus, got {g.key}")
        n = g.params["n"]
        for k in range(1, n):
            entries.append(_entry(g, f"segment(k={k})", range(k)))
    else:
        raise UsageError(f"unknown subset family {family!r}")
    entries.sort(key=lambda e: (e.subset_size, e.descriptor))
    return IsoProfile(tuple(entries))
