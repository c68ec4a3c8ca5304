"""Enumerable toy problems with exact posteriors, used as oracle denoisers.

When the data distribution is a finite list of same-size graphs, the true
per-dimension posterior p(z_0 | G_t) follows from Bayes over that list because
the forward process factorises over dimensions.
"""
from __future__ import annotations

import itertools

import numpy as np

from .ctmc import transition_closed_form
from .graphs import AttributedGraph, MarginalPair
from .sampling import UniformSource, corrector_rate_arrays, corrector_scale, leap_arrays
from .schedule import NoiseSchedule


class ExactPosterior:
    """``prob_fn(x, e, t) -> (px, pe)`` computed by enumeration over the support."""

    def __init__(self, graphs, weights, schedule: NoiseSchedule, marginals: MarginalPair):
        sizes = {g.n for g in graphs}
        if len(sizes) != 1:
            raise ValueError("all support graphs must share one size")
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != (len(graphs),) or np.any(w < 0) or w.sum() <= 0:
            raise ValueError("weights must be non-negative with positive sum")
        self.graphs = list(graphs)
        self.n = sizes.pop()
        self.weights = w / w.sum()
        self.x0 = np.stack([g.node_labels for g in graphs])  # (G, n)
        self.e0 = np.stack([g.edge_labels for g in graphs])  # (G, n, n)
        self.schedule = schedule
        self.marginals = marginals
        self.a = len(marginals.m_X)
        self.b = len(marginals.m_E)

    def posterior_weights(self, x, e, t: float) -> np.ndarray:
        """(B, G) posterior over support graphs given noisy labels at time t."""
        bbar = self.schedule.beta_bar(t)
        lqx = np.log(np.maximum(transition_closed_form(self.marginals.m_X, bbar), 1e-300))
        lqe = np.log(np.maximum(transition_closed_form(self.marginals.m_E, bbar), 1e-300))
        iu = np.triu_indices(self.n, 1)
        # log q(x_t | x_0) summed over nodes and unordered pairs
        ll = lqx[self.x0[None, :, :], x[:, None, :]].sum(-1)
        ll = ll + lqe[self.e0[:, iu[0], iu[1]][None], e[:, None, iu[0], iu[1]]].sum(-1)
        ll = ll + np.log(np.maximum(self.weights, 1e-300))[None]
        ll -= ll.max(axis=1, keepdims=True)
        post = np.exp(ll)
        return post / post.sum(axis=1, keepdims=True)

    def __call__(self, x, e, t: float):
        post = self.posterior_weights(x, e, t)
        px = np.einsum("bg,gns->bns", post, np.eye(self.a)[self.x0])
        pe = np.einsum("bg,gijs->bijs", post, np.eye(self.b)[self.e0])
        return px, pe


def all_simple_graphs(n: int) -> list:
    """Every labelled simple graph on n nodes (single node label, one edge type)."""
    pairs = list(itertools.combinations(range(n), 2))
    out = []
    for mask in itertools.product((0, 1), repeat=len(pairs)):
        edges = [(i, j, 1) for (i, j), on in zip(pairs, mask) if on]
        out.append(AttributedGraph.from_edges(n, edges, a=1, b=2))
    return out


TOY3_CLASS_WEIGHTS = (0.1, 0.2, 0.3, 0.4)  # by edge count 0..3


def toy3(schedule: NoiseSchedule, marginals: MarginalPair | None = None):
    """3-node toy: iso class k (k edges) has total mass TOY3_CLASS_WEIGHTS[k].

    Returns ``(oracle, class_distribution, marginals)``. Marginals default to the
    data edge marginal, as they would be estimated from the dataset.
    """
    graphs = all_simple_graphs(3)
    counts = np.array([g.num_edges for g in graphs])
    per_class = np.bincount(counts, minlength=4)
    w = np.array([TOY3_CLASS_WEIGHTS[c] / per_class[c] for c in counts])
    if marginals is None:
        p_edge = float(np.dot(w, counts) / 3.0)
        marginals = MarginalPair(np.array([1.0]), np.array([1.0 - p_edge, p_edge]))
    return ExactPosterior(graphs, w, schedule, marginals), np.array(TOY3_CLASS_WEIGHTS), marginals


def toy3_class(e: np.ndarray) -> np.ndarray:
    """Isomorphism class of 3-node single-type graphs: the edge count."""
    return (e[..., 0, 1] > 0).astype(int) + (e[..., 0, 2] > 0) + (e[..., 1, 2] > 0)


def two_state(p0, schedule: NoiseSchedule, m_e=(0.5, 0.5)):
    """One binary edge dimension (n = 2) with data law ``p0`` and edge marginal ``m_e``."""
    p0 = np.asarray(p0, dtype=np.float64)
    graphs = [AttributedGraph.from_edges(2, [], a=1, b=2), AttributedGraph.from_edges(2, [(0, 1, 1)], a=1, b=2)]
    marginals = MarginalPair(np.array([1.0]), np.asarray(m_e, dtype=np.float64))
    return ExactPosterior(graphs, p0, schedule, marginals), marginals


def forward_marginal(p0, m, schedule: NoiseSchedule, t: float) -> np.ndarray:
    """q_t for a single dimension: ``p0 @ Qbar(t)``."""
    return np.asarray(p0, dtype=np.float64) @ transition_closed_form(m, schedule.beta_bar(t))


def tv(p, q) -> float:
    return 0.5 * float(np.abs(np.asarray(p, dtype=np.float64) - np.asarray(q, dtype=np.float64)).sum())


def empirical(values, k: int) -> np.ndarray:
    return np.bincount(np.asarray(values).ravel(), minlength=k)[:k] / np.asarray(values).size


def corrector_chains(start, p0, schedule: NoiseSchedule, t: float, steps: int, tau: float, tau_c: float,
                     chains: int, rng: np.random.Generator, m_e=(0.5, 0.5)) -> np.ndarray:
    """Run ``steps`` corrector leaps at fixed ``t`` on the two-state toy.

    ``start`` is the law the chains are initialised from; the oracle posterior is
    that of data law ``p0``. Returns the empirical edge law after the last step.
    """
    orc, marg = two_state(p0, schedule, m_e)
    src = UniformSource(rng)
    z = rng.choice(2, size=chains, p=np.asarray(start, dtype=np.float64))
    e = np.zeros((chains, 2, 2), dtype=np.int64)
    e[:, 0, 1] = e[:, 1, 0] = z
    x = np.zeros((chains, 2), dtype=np.int64)
    for _ in range(steps):
        px, pe = orc(x, e, t)
        rates = corrector_rate_arrays(x, e, px, pe, t, schedule, marg)
        x, e = leap_arrays(x, e, rates, corrector_scale(tau, tau_c), src)
    return empirical(e[:, 0, 1], 2)
