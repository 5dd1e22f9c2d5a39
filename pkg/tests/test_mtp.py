import networkx as nx
import numpy as np
import pytest
from hypothesis import given, strategies as st

from percolab import mtp
from percolab.clusters import count_infinite, destroyed_set, label_clusters
from percolab.errors import InvarianceError, RegimeError, UsageError
from percolab.fields import Configuration, Seed, level_set, sample_field
from percolab.graphs import (
    build_regular_tree, build_rooted_tree, build_torus, build_tree_cycle, from_edges,
)

import naive


def star(arms=3, length=2):
    edges, tips = [], []
    v = 1
    for _ in range(arms):
        prev = 0
        for _ in range(length):
            edges.append((prev, v))
            prev = v
            v += 1
        tips.append(prev)
    return from_edges(v, edges, tips, 0, "star")


# mass transport


@pytest.mark.parametrize("g", [build_torus(1, 7), build_torus(2, 4), build_torus(3, 3)])
def test_adjacency_transport(g):
    f = mtp.TransportFunction(lambda u, v: float(v in g.neighbors(u)), tuple(g.automorphisms))
    assert mtp.mtp_check(g, f) == (2.0 * g.params["d"], 2.0 * g.params["d"])


def test_identity_transport():
    g = build_torus(2, 3)
    f = mtp.TransportFunction(lambda u, v: float(u == v), tuple(g.automorphisms))
    assert mtp.mtp_check(g, f) == (1.0, 1.0)


def test_displacement_transport_2d():
    g = build_torus(2, 4)
    w = np.random.default_rng(5).exponential(size=(4, 4))

    def f(u, v):
        (ux, uy), (vx, vy) = divmod(u, 4), divmod(v, 4)
        return float(w[(vx - ux) % 4, (vy - uy) % 4])

    out, inn = mtp.mtp_check(g, mtp.TransportFunction(f, tuple(g.automorphisms)))
    assert abs(out - inn) <= 1e-12


@pytest.mark.parametrize("g", [build_torus(1, 12), build_torus(2, 4)])
def test_random_invariant_transports(g):
    rng = np.random.default_rng(0)
    for _ in range(100):
        out, inn = mtp.mtp_check(g, mtp.random_invariant_transport(g, rng))
        assert abs(out - inn) <= 1e-12


def test_non_invariant_transport_rejected():
    g = build_torus(1, 6)
    f = mtp.TransportFunction(lambda u, v: float(u == 0 and v == 1), tuple(g.automorphisms))
    with pytest.raises(InvarianceError) as info:
        mtp.mtp_check(g, f)
    err = info.value
    perm = g.automorphisms[err.automorphism]
    t = f.matrix(6)
    assert t[perm[err.u], perm[err.v]] != t[err.u, err.v]


def test_mtp_needs_transitive_group():
    g = build_rooted_tree(2, 2)
    with pytest.raises(UsageError):
        mtp.mtp_check(g, mtp.TransportFunction(lambda u, v: 0.0))


# gamma sequences


def test_gamma_constant_levels():
    g = build_rooted_tree(2, 5)
    f = sample_field(g, Seed(1))
    empty = mtp.make_gamma_sequence(g, "destroyed-at", f, [0.0] * 4)
    assert all(len(c) == 0 for c in empty.configs)
    full = mtp.make_gamma_sequence(g, "destroyed-at", f, [1.0] * 4)
    assert all(c == Configuration.full(g) for c in full.configs)


def test_gamma_probability_decreases():
    g = build_rooted_tree(2, 12)
    seq = mtp.make_gamma_sequence(g, "destroyed-at", sample_field(g, Seed(3)),
                                  mtp.destroyed_at_levels(6), n_samples=20000)
    vals = [e.value for e in seq.origin_probability]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_gamma_nested_along_sequence():
    g = build_regular_tree(3, 5)
    seq = mtp.make_gamma_sequence(g, "destroyed-at", sample_field(g, Seed(7)), mtp.destroyed_at_levels(5))
    assert all(b.issubset(a) for a, b in zip(seq.configs, seq.configs[1:]))


def test_gamma_rules():
    g = build_rooted_tree(2, 3)
    f = sample_field(g, Seed(1))
    with pytest.raises(UsageError):
        mtp.make_gamma_sequence(g, "destroyed-at", f, [0.5, 0.6])
    with pytest.raises(UsageError):
        mtp.make_gamma_sequence(g, "random", f, [0.5])
    seq = mtp.make_gamma_sequence(g, "explicit", configs=[Configuration.empty(g)])
    assert seq.descriptor == "explicit" and len(seq.configs) == 1


# encounter points and forest


def test_path_has_no_encounter_points():
    g = build_torus(1, 3)
    path = from_edges(5, [(i, i + 1) for i in range(4)], [0, 4], 2)
    assert len(mtp.find_encounter_points(path, Configuration.full(path))) == 0
    assert len(mtp.find_encounter_points(g, Configuration.full(g))) == 0


def test_regular_tree_interior():
    g = build_regular_tree(3, 3)
    Y = mtp.find_encounter_points(g, Configuration.full(g))
    assert np.array_equal(Y.mask, ~g.boundary_mask)


def test_star_center():
    g = star()
    Y = mtp.find_encounter_points(g, Configuration.full(g))
    assert Y.as_set() == {0}
    assert len(mtp.build_forest(g, Configuration.full(g), np.zeros(g.vertex_count)).edges) == 0


def test_empty_forest():
    g = build_rooted_tree(2, 3)
    F = mtp.build_forest(g, Configuration.empty(g), Seed(1, "forest"))
    assert len(F.Y) == 0 and len(F.edges) == 0 and F.is_acyclic()


def test_two_encounter_points_mutual():
    # two branching vertices 0 and 1 joined by an edge, each with two boundary arms
    g = from_edges(6, [(0, 1), (0, 2), (0, 3), (1, 4), (1, 5)], [2, 3, 4, 5], 0, "double-star")
    F = mtp.build_forest(g, Configuration.full(g), np.linspace(0, 1, 6))
    assert F.Y.as_set() == {0, 1}
    assert F.edge_set() == {(0, 1)}


def test_full_regular_tree_degrees():
    for L in (3, 4, 5):
        g = build_regular_tree(3, L)
        F = mtp.build_forest(g, Configuration.full(g), Seed(L, "forest"))
        dist_to_boundary = g.distances_from(g.boundary)
        deg = F.degrees()
        deep = F.Y.mask & (dist_to_boundary >= 2)
        assert np.all(deg[deep] == 3)
        assert F.is_acyclic()


def _check_against_naive(g, omega, x):
    G = naive.to_nx(g)
    B = set(g.boundary.tolist())
    Y = mtp.find_encounter_points(g, omega)
    assert Y.as_set() == naive.encounter_points(G, omega.as_set(), B)
    F = mtp.build_forest(g, omega, x)
    assert F.edge_set() == naive.forest_edges(G, omega.as_set(), B, x)
    assert all(F.Y.mask[a] and F.Y.mask[b] for a, b in F.edges)


@pytest.mark.parametrize("g", [
    build_regular_tree(3, 2), build_rooted_tree(2, 2), build_tree_cycle(2, 1, 3), build_tree_cycle(1, 2, 4),
    star(3, 2), star(4, 2),
], ids=lambda g: g.key)
def test_exhaustive_against_naive(g):
    rng = np.random.default_rng(g.vertex_count)
    for m in range(1 << g.vertex_count):
        mask = np.array([(m >> v) & 1 for v in range(g.vertex_count)], dtype=bool)
        _check_against_naive(g, Configuration(mask, g.key), rng.random(g.vertex_count))


def test_tied_labels_break_by_id():
    g = build_regular_tree(3, 3)
    omega = Configuration.full(g)
    _check_against_naive(g, omega, np.zeros(g.vertex_count))


@given(st.integers(0, 2**20), st.floats(0.5, 1.0))
def test_random_configurations_against_naive(seed, p):
    for g in (build_regular_tree(3, 4), build_tree_cycle(2, 2, 3)):
        omega = level_set(sample_field(g, Seed(seed)), p)
        _check_against_naive(g, omega, sample_field(g, Seed(seed, "forest")).labels)


# restriction


def test_restrict_extremes():
    g = build_regular_tree(3, 4)
    omega = Configuration.full(g)
    F = mtp.build_forest(g, omega, Seed(2, "forest"))
    assert mtp.restrict_forest(F, g, omega, Configuration.empty(g)).edge_set() == F.edge_set()
    assert len(mtp.restrict_forest(F, g, omega, Configuration.full(g)).edges) == 0


def test_restrict_cut_vertex():
    # 0 and 4 are encounter points joined through the path 0-5-4; cutting 5 drops the edge
    edges = [(0, 1), (0, 2), (0, 5), (5, 4), (4, 3), (4, 6)]
    g = from_edges(7, edges, [1, 2, 3, 6], 0, "barbell")
    omega = Configuration.full(g)
    F = mtp.build_forest(g, omega, np.zeros(7))
    assert F.edge_set() == {(0, 4)}
    Fn = mtp.restrict_forest(F, g, omega, Configuration.from_vertices(g, [5]))
    assert Fn.edge_set() == set() and Fn.Y == F.Y


@given(st.integers(0, 2**20), st.floats(0.55, 1.0), st.floats(0, 1), st.floats(0, 1))
def test_restrict_monotone(seed, p, a, b):
    g = build_regular_tree(3, 4)
    f = sample_field(g, Seed(seed))
    omega = level_set(f, p)
    F = mtp.build_forest(g, omega, Seed(seed, "forest"))
    small, big = (destroyed_set(g, level_set(f, t)) for t in sorted((a, b)))
    e_small = mtp.restrict_forest(F, g, omega, small).edge_set()
    e_big = mtp.restrict_forest(F, g, omega, big).edge_set()
    assert e_big <= e_small <= F.edge_set()


# boundary inequality


def test_eq2_kernel_matches_python_path():
    g = build_regular_tree(3, 4)
    levels = np.array([0.0, 0.55, 0.6, 1.0])
    k, kx = Seed(11).keys, Seed(11, "forest").keys
    in_y, in_dk, in_gamma, _ = mtp._eq2_batch(g.indptr, g.indices, g.boundary_mask, g.origin, *k, *kx,
                                              0, 150, 0.7, levels, True)
    G = naive.to_nx(g)
    B = set(g.boundary.tolist())
    o = g.origin
    for r in range(150):
        f = sample_field(g, Seed(11, replica=r))
        omega = level_set(f, 0.7)
        x = sample_field(g, Seed(11, "forest", r)).labels
        F = mtp.build_forest(g, omega, x)
        assert in_y[r] == F.Y.mask[o]
        edges = naive.forest_edges(G, omega.as_set(), B, x)
        nbrs = {a if b == o else b for a, b in edges if o in (a, b)}
        for i, lv in enumerate(levels):
            gamma = destroyed_set(g, level_set(f, lv))
            assert in_gamma[r, i] == gamma.mask[o]
            assert in_dk[r, i] == mtp.k_boundary_flag(F, g, omega, gamma, o)
            if not F.Y.mask[o]:
                continue
            if gamma.mask[o]:
                expected = bool(nbrs)
            else:
                comp = nx.node_connected_component(G.subgraph(omega.as_set() - gamma.as_set()), o)
                expected = any(u not in comp for u in nbrs)
            assert in_dk[r, i] == expected


def test_eq2_full_gamma_and_empty_gamma():
    g = build_regular_tree(3, 6)
    out = mtp.boundary_inequality_stats(g, 2, 1.0, [1.0, 0.0], 50)
    # omega = V: every interior vertex is an encounter point with forest neighbours
    assert out[0]["lhs"].value == 1.0 and out[0]["rhs"].value == 1.0
    assert out[1]["rhs"].value == 0.0


def test_eq2_empty_gamma_random():
    g = build_regular_tree(3, 6)
    out = mtp.boundary_inequality_stats(g, 4, 0.75, [0.0], 2000)
    assert out[0]["rhs"].value == 0.0 and out[0]["lhs"].value > 0


def test_eq2_reports():
    g = build_regular_tree(3, 6)
    out = mtp.boundary_inequality_stats(g, 4, 0.7, [0.6, 0.55], 3000)
    for rec in out:
        assert rec["rhs"].value <= rec["lhs"].value
        assert rec["holds"] == (rec["lhs"].value <= 2 * rec["rhs"].value + 3 * rec["margin_sigma"])
    with pytest.raises(UsageError):
        mtp.boundary_inequality_stats(build_torus(2, 3), 1, 0.7, [0.6], 10)


# xi


def test_xi_hand_example():
    path = from_edges(7, [(i, i + 1) for i in range(6)], [0], 0, "path")
    omega = Configuration.from_vertices(path, [0, 1, 2, 3, 4])
    gamma = Configuration.from_vertices(path, [2])
    assert mtp.build_xi(path, omega, gamma, 2).as_set() == {0, 4, 5, 6}
    assert mtp.build_xi(path, omega, gamma, 1).as_set() == {0, 4, 5}
    assert mtp.build_xi(path, omega, gamma, 0).as_set() == {0, 4}


def test_xi_without_gamma_is_neighbourhood():
    g = build_tree_cycle(2, 3, 4)
    for r in range(50):
        omega = level_set(sample_field(g, Seed(5, replica=r)), 0.6)
        if count_infinite(label_clusters(g, omega)) != 1:
            continue
        U = destroyed_set(g, omega).members
        dist = g.distances_from(U)
        for n in (0, 1, 3):
            xi = mtp.build_xi(g, omega, Configuration.empty(g), n)
            assert xi.as_set() == set(np.flatnonzero((dist >= 0) & (dist <= n)).tolist())
            if n == 0:
                assert xi.issubset(destroyed_set(g, omega))


def test_xi_against_naive():
    g = build_tree_cycle(2, 2, 4)
    G = naive.to_nx(g)
    B = set(g.boundary.tolist())
    checked = 0
    for r in range(200):
        f = sample_field(g, Seed(8, replica=r))
        omega = level_set(f, 0.65)
        if count_infinite(label_clusters(g, omega)) != 1:
            continue
        gamma = level_set(sample_field(g, Seed(8, "forest", r)), 0.15)
        for n in (1, 2):
            got = mtp.build_xi(g, omega, gamma, n).as_set()
            assert got == naive.xi(G, omega.as_set(), gamma.as_set(), B, n)
        checked += 1
    assert checked > 20


def test_xi_regime_error():
    g = build_rooted_tree(2, 2)
    two = Configuration.from_vertices(g, [3, 6])
    with pytest.raises(RegimeError):
        mtp.build_xi(g, two, Configuration.empty(g), 1)
    with pytest.raises(RegimeError):
        mtp.build_xi(g, Configuration.empty(g), Configuration.empty(g), 1)
