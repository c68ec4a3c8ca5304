import itertools

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings

from ctdg.encoding import (
    cycle_counts_formula,
    oracle_connected_components,
    oracle_cycle_enumeration,
    oracle_largest_cc_size,
    rrwp,
    rrwp_components,
    rrwp_largest_cc_size,
    rrwp_pair_multiset,
    rrwp_same_component,
    rrwp_tensor,
)
from ctdg.graphs import AttributedGraph, apply_permutation

from .strategies import graph_and_perm, random_graph


def cycle(n):
    return AttributedGraph.from_edges(n, [(i, (i + 1) % n) for i in range(n)])


def complete(n):
    return AttributedGraph.from_edges(n, list(itertools.combinations(range(n), 2)))


def rook_4x4():
    cells = [(r, c) for r in range(4) for c in range(4)]
    edges = [(i, j) for (i, a), (j, b) in itertools.combinations(enumerate(cells), 2)
             if (a[0] == b[0]) != (a[1] == b[1])]
    return AttributedGraph.from_edges(16, edges)


def shrikhande():
    diffs = {(0, 1), (0, 3), (1, 0), (3, 0), (1, 1), (3, 3)}
    cells = [(r, c) for r in range(4) for c in range(4)]
    edges = [(i, j) for (i, a), (j, b) in itertools.combinations(enumerate(cells), 2)
             if ((a[0] - b[0]) % 4, (a[1] - b[1]) % 4) in diffs]
    return AttributedGraph.from_edges(16, edges)


def test_path_node_encoding():
    g = AttributedGraph.from_edges(3, [(0, 1), (1, 2)])
    np.testing.assert_allclose(rrwp(g, 3).node_enc[0], [1.0, 0.0, 0.5])


def test_triangle_edge_encoding():
    np.testing.assert_allclose(rrwp(complete(3), 2).edge_enc[0, 1], [0.0, 0.5])


def test_rrwp_needs_positive_k():
    with pytest.raises(ValueError):
        rrwp(complete(3), 0)


@settings(max_examples=60, deadline=None)
@given(graph_and_perm(max_n=8))
def test_rrwp_structure_and_equivariance(gp):
    g, p = gp
    enc = rrwp(g, 6)
    np.testing.assert_array_equal(enc.edge_enc[..., 0], np.eye(g.n))
    assert np.all(enc.edge_enc >= 0) and np.all(enc.edge_enc <= 1 + 1e-12)
    deg = g.adjacency.sum(axis=1)
    rows = enc.edge_enc.sum(axis=1)  # (n, K)
    for k in range(1, 6):
        np.testing.assert_allclose(rows[deg > 0, k], 1.0, atol=1e-12)
        np.testing.assert_array_equal(rows[deg == 0, k], 0.0)
    encp = rrwp(apply_permutation(g, p), 6)
    pi = p.perm
    np.testing.assert_allclose(encp.edge_enc[np.ix_(pi, pi)], enc.edge_enc, rtol=0, atol=1e-12)


def test_torch_stack_matches_numpy():
    import torch

    rng = np.random.default_rng(0)
    gs = [random_graph(rng, 7) for _ in range(5)]
    adj = torch.tensor(np.stack([g.adjacency for g in gs]), dtype=torch.float64)
    out = rrwp_tensor(adj, 5).numpy()
    for k, g in enumerate(gs):
        np.testing.assert_allclose(out[k], rrwp(g, 5).edge_enc, atol=1e-14)


def test_components_examples():
    assert set(oracle_connected_components(cycle(5)).tolist()) == {0}
    two = AttributedGraph.from_edges(6, [(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5)])
    assert oracle_connected_components(two).tolist() == [0, 0, 0, 3, 3, 3]
    assert oracle_largest_cc_size(cycle(7)) == 7
    tri_square = AttributedGraph.from_edges(7, [(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (5, 6), (3, 6)])
    assert oracle_largest_cc_size(tri_square) == 4


def test_single_power_misses_bipartite_pairs():
    # path 0-1-2: (M^2)_{01} = 0 even though 0 and 1 are connected
    g = AttributedGraph.from_edges(3, [(0, 1), (1, 2)])
    enc = rrwp(g, 3)
    assert enc.edge_enc[0, 1, 2] == 0
    assert rrwp_same_component(g)[0, 1]


def _check_components(g):
    comp = oracle_connected_components(g)
    assert np.array_equal(rrwp_same_component(g), comp[:, None] == comp[None, :])
    assert np.array_equal(rrwp_components(g), comp)
    assert rrwp_largest_cc_size(g) == oracle_largest_cc_size(g)


def test_components_random():
    rng = np.random.default_rng(5)
    for _ in range(500):
        _check_components(random_graph(rng, int(rng.integers(1, 9)), p=rng.random() * 0.5))


def test_cycle_formula_examples():
    assert cycle_counts_formula(complete(3), 3).tolist() == [1, 1, 1]
    assert cycle_counts_formula(cycle(4), 4).tolist() == [1] * 4
    assert cycle_counts_formula(cycle(4), 3).tolist() == [0] * 4
    with pytest.raises(ValueError):
        cycle_counts_formula(cycle(4), 5)


def test_cycle_oracle_examples():
    assert oracle_cycle_enumeration(complete(4), 3).tolist() == [3] * 4
    tree = AttributedGraph.from_edges(6, [(0, 1), (0, 2), (1, 3), (1, 4), (2, 5)])
    for p in range(3, 7):
        assert not oracle_cycle_enumeration(tree, p).any()
    pet = AttributedGraph.from_adjacency(nx.to_numpy_array(nx.petersen_graph(), dtype=int))
    for p, total in [(5, 12), (6, 10), (8, 15), (9, 20)]:
        assert oracle_cycle_enumeration(pet, p).sum() == p * total
    with pytest.raises(ValueError):
        oracle_cycle_enumeration(AttributedGraph.from_edges(11, []), 3)


def test_cycle_formula_matches_oracle_on_atlas():
    for G in nx.graph_atlas_g()[1:]:
        if G.number_of_nodes() > 7:
            break
        g = AttributedGraph.from_adjacency(nx.to_numpy_array(G, dtype=int))
        for p in (3, 4):
            assert np.array_equal(cycle_counts_formula(g, p), oracle_cycle_enumeration(g, p))


def test_cycle_formula_matches_oracle_random():
    rng = np.random.default_rng(6)
    for _ in range(2000):
        g = random_graph(rng, int(rng.integers(1, 8)))
        for p in (3, 4):
            assert np.array_equal(cycle_counts_formula(g, p), oracle_cycle_enumeration(g, p))


def test_encoding_does_not_count_eight_cycles():
    # 4x4 rook graph and Shrikhande graph: both srg(16, 6, 2, 2)
    a, b = rook_4x4(), shrikhande()
    assert rrwp_pair_multiset(a, 10) == rrwp_pair_multiset(b, 10)
    assert sorted(rrwp(a, 10).node_enc.round(12).tolist()) == sorted(rrwp(b, 10).node_enc.round(12).tolist())
    ca = nx.simple_cycles(nx.from_numpy_array(a.adjacency), length_bound=8)
    cb = nx.simple_cycles(nx.from_numpy_array(b.adjacency), length_bound=8)
    count = lambda cycles: sum(1 for c in cycles if len(c) == 8)  # noqa: E731
    assert count(ca) != count(cb)
