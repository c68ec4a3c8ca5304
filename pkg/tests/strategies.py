"""Hypothesis strategies shared across the suite."""
import numpy as np
from hypothesis import strategies as st

from ctdg.graphs import AttributedGraph, Permutation


@st.composite
def attributed_graphs(draw, min_n=1, max_n=8, a=1, b=2, p_edge=None):
    n = draw(st.integers(min_n, max_n))
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    p = rng.random() if p_edge is None else p_edge
    upper = np.triu((rng.random((n, n)) < p) * rng.integers(1, b, (n, n)), 1) if b > 1 else np.zeros((n, n), int)
    e = upper + upper.T
    x = rng.integers(0, a, n)
    return AttributedGraph(x, e, a, b)


@st.composite
def graph_and_perm(draw, max_n=8, a=2, b=3):
    g = draw(attributed_graphs(max_n=max_n, a=a, b=b))
    perm = draw(st.permutations(list(range(g.n))))
    return g, Permutation(np.array(perm, dtype=np.int64))


def random_graph(rng, n, p=None, a=1, b=2):
    p = rng.random() if p is None else p
    upper = np.triu((rng.random((n, n)) < p) * rng.integers(1, b, (n, n)), 1)
    return AttributedGraph(rng.integers(0, a, n), upper + upper.T, a, b)
