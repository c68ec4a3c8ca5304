import itertools
import json

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings

from ctdg.graphs import AttributedGraph, Permutation, apply_permutation, generate_planar
from ctdg.metrics import (
    ORBIT_NAMES,
    MetricReport,
    clustering_coeffs,
    degree_histogram,
    kuratowski_oracle,
    laplacian_spectrum,
    mmd,
    orbit4_counts,
    validity_planar,
    validity_planar_oracle,
    vun_report,
)

from .strategies import graph_and_perm, random_graph


def complete(n):
    return AttributedGraph.from_edges(n, list(itertools.combinations(range(n), 2)))


def star(leaves):
    return AttributedGraph.from_edges(leaves + 1, [(0, i) for i in range(1, leaves + 1)])


def k33():
    return AttributedGraph.from_edges(6, [(i, j) for i in range(3) for j in range(3, 6)])


def test_clustering_examples():
    assert clustering_coeffs(complete(3)).tolist() == [1.0, 1.0, 1.0]
    assert not clustering_coeffs(star(4)).any()


def test_spectrum_examples():
    np.testing.assert_allclose(laplacian_spectrum(complete(3)), [0, 3, 3], atol=1e-12)


def test_spectrum_properties_random():
    rng = np.random.default_rng(0)
    for _ in range(100):
        g = random_graph(rng, int(rng.integers(1, 9)))
        s = laplacian_spectrum(g)
        assert len(s) == g.n and np.all(s >= -1e-10)
        assert abs(s.sum() - g.adjacency.sum()) <= 1e-8


def test_degree_histogram():
    np.testing.assert_allclose(degree_histogram(star(3)), [0, 0.75, 0, 0.25])


def brute_orbits(g):
    """Orbit counts by matching every connected induced 4-set against labelled templates."""
    templates = {
        "path": [(0, 1), (1, 2), (2, 3)],
        "star": [(0, 1), (0, 2), (0, 3)],
        "cycle": [(0, 1), (1, 2), (2, 3), (0, 3)],
        "paw": [(0, 1), (1, 2), (0, 2), (2, 3)],
        "diamond": [(0, 1), (1, 2), (2, 3), (0, 3), (0, 2)],
        "clique": list(itertools.combinations(range(4), 2)),
    }
    # orbit of each template position
    orbit_of = {
        "path": [0, 1, 1, 0], "star": [3, 2, 2, 2], "cycle": [4] * 4,
        "paw": [6, 6, 7, 5], "diamond": [9, 8, 9, 8], "clique": [10] * 4,
    }
    out = np.zeros((g.n, 11), dtype=int)
    a = g.adjacency
    for quad in itertools.combinations(range(g.n), 4):
        sub = {(i, j) for i, j in itertools.combinations(range(4), 2) if a[quad[i], quad[j]]}
        for name, edges in templates.items():
            for perm in itertools.permutations(range(4)):
                mapped = {tuple(sorted((perm[i], perm[j]))) for i, j in edges}
                if mapped == sub:
                    for pos in range(4):
                        out[quad[perm[pos]], orbit_of[name][pos]] += 1
                    break
            else:
                continue
            break
    return out


def test_orbit_counts_match_template_matching():
    rng = np.random.default_rng(1)
    for _ in range(40):
        g = random_graph(rng, int(rng.integers(4, 8)))
        assert np.array_equal(orbit4_counts(g), brute_orbits(g))


def test_orbit_counts_known_graphs():
    k4 = orbit4_counts(complete(4))
    assert k4[:, 10].tolist() == [1] * 4 and k4.sum() == 4
    s = orbit4_counts(star(3))
    assert s[0, ORBIT_NAMES.index("star_center")] == 1
    assert s[1:, ORBIT_NAMES.index("star_leaf")].tolist() == [1, 1, 1]


def test_mmd_identity_symmetry_and_separation():
    rng = np.random.default_rng(2)
    a = [random_graph(rng, 6) for _ in range(8)]
    b = [random_graph(rng, 7) for _ in range(5)]
    for stat in ("degree", "cluster", "orbit", "spectrum"):
        assert abs(mmd(a, a, stat)) <= 1e-12
        assert mmd(a, b, stat) == mmd(b, a, stat)
        assert mmd(a, b, stat) >= 0
    empty = [AttributedGraph.from_edges(6, []) for _ in range(4)]
    full = [complete(6) for _ in range(4)]
    assert mmd(empty, full, "degree") >= 0.1
    with pytest.raises(ValueError):
        mmd([], full, "degree")
    with pytest.raises(ValueError):
        mmd(full, full, "betweenness")


def test_validity_examples():
    assert validity_planar(complete(4))
    assert not validity_planar(complete(5))
    assert not validity_planar(k33())
    assert not validity_planar(AttributedGraph.from_edges(4, [(0, 1), (2, 3)]))
    for g in generate_planar(30, (4, 20), seed=9):
        assert validity_planar(g)


def test_kuratowski_oracle_examples():
    assert kuratowski_oracle(complete(5)) and kuratowski_oracle(k33())
    # subdivided K3,3: one edge split by a seventh vertex
    edges = [(i, j) for i in range(3) for j in range(3, 6) if (i, j) != (0, 3)] + [(0, 6), (6, 3)]
    assert kuratowski_oracle(AttributedGraph.from_edges(7, edges))
    assert not kuratowski_oracle(complete(4))
    with pytest.raises(ValueError):
        kuratowski_oracle(complete(8))


def test_validity_matches_kuratowski_oracle_on_all_small_graphs():
    for G in nx.graph_atlas_g()[1:]:
        g = AttributedGraph.from_adjacency(nx.to_numpy_array(G, dtype=int))
        assert validity_planar(g) == validity_planar_oracle(g), G.edges()


def test_vun_counting():
    g = generate_planar(1, 8, seed=0)[0]
    rep = vun_report([g] * 10, [complete(4)])
    assert rep.validity == 1.0 and rep.uniqueness == pytest.approx(0.1) and rep.vun <= 0.1
    rep = vun_report([complete(5)] * 3, [complete(4)])
    assert rep.validity == 0 and rep.vun == 0
    train = list(generate_planar(12, (6, 9), seed=1))
    rep = vun_report(train, train)
    assert rep.novelty == 0 and rep.vun == 0
    assert rep.degree_mmd <= 1e-12 and rep.spectrum_mmd <= 1e-12


def test_report_invariants_and_serialisation():
    with pytest.raises(ValueError):
        MetricReport(-1, 0, 0, 0, 1, 1, 1, 1, 1, 1)
    with pytest.raises(ValueError):
        MetricReport(0, 0, 0, 0, 0.2, 1, 1, 0.5, 1, 1)
    rep = vun_report(list(generate_planar(5, 7, seed=3)), list(generate_planar(5, 7, seed=4)))
    assert MetricReport.from_json(rep.to_json()) == rep
    keys = [line.split(" = ")[0] for line in rep.to_text().splitlines()]
    assert keys == list(json.loads(rep.to_json()))


@settings(max_examples=15, deadline=None)
@given(graph_and_perm(max_n=8, a=1, b=2))
def test_report_isomorphism_invariant(gp):
    g, p = gp
    ref = list(generate_planar(4, (5, 8), seed=0))
    gen = [g, complete(4), g]
    genp = [apply_permutation(h, Permutation.random(h.n, np.random.default_rng(h.n))) for h in gen]
    genp[0] = apply_permutation(g, p)
    assert vun_report(gen, ref) == vun_report(genp, ref)
