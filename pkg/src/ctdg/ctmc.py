"""Marginal-transition CTMC: rate matrices, transition probabilities, forward noising.

Transition matrices use the row = source-state convention:
``Q[i, j] = q(z_t = j | z_0 = i)``.
"""
from __future__ import annotations

import numpy as np

from .graphs import AttributedGraph, MarginalPair
from .schedule import NoiseSchedule


def _check_prob(m) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 1 or np.any(m < 0) or abs(m.sum() - 1.0) > 1e-10:
        raise ValueError(f"not a probability vector: {m}")
    return m


def base_rate_matrix(m) -> np.ndarray:
    """``1 m' - I``: rate m[j] towards every other state j."""
    m = _check_prob(m)
    return np.ones((len(m), 1)) * m[None, :] - np.eye(len(m))


def transition_closed_form(m, bbar) -> np.ndarray:
    """``exp(-bbar) I + (1 - exp(-bbar)) 1 m'``; broadcasts over an array of ``bbar``."""
    m = _check_prob(m)
    bbar = np.asarray(bbar, dtype=np.float64)
    if np.any(bbar < 0):
        raise ValueError("bbar must be non-negative")
    keep = np.exp(-bbar)[..., None, None]
    return keep * np.eye(len(m)) + (1.0 - keep) * m[None, :]


def transition_expm_oracle(m, bbar: float, order: int = 18) -> np.ndarray:
    """``expm(bbar * R_b)`` by scaling and squaring with a truncated Taylor series."""
    a = float(bbar) * base_rate_matrix(m)
    norm = np.abs(a).sum(axis=1).max()
    squarings = max(0, int(np.ceil(np.log2(norm / 0.5))) if norm > 0.5 else 0)
    a = a / 2.0**squarings
    out = np.eye(len(a))
    term = np.eye(len(a))
    for k in range(1, order + 1):
        term = term @ a / k
        out = out + term
    for _ in range(squarings):
        out = out @ out
    return out


def sample_rows(q: np.ndarray, states: np.ndarray, uniforms: np.ndarray) -> np.ndarray:
    """Inverse-CDF draw from rows ``q[states]`` with one uniform per draw."""
    cdf = np.cumsum(q, axis=-1)[states]
    out = (uniforms[..., None] >= cdf).sum(axis=-1)
    return np.minimum(out, q.shape[-1] - 1)


def symmetric_uniforms(rng: np.random.Generator, batch, n: int) -> np.ndarray:
    """Uniforms of shape ``batch + (n, n)`` with entry (i, j) equal to (j, i)."""
    batch = tuple(batch)
    return symmetrize_pairs(rng.random(batch + (n, n)), len(batch))


def symmetrize_pairs(u: np.ndarray, node_axis: int) -> np.ndarray:
    """Copy values at i < j onto j > i along axes (node_axis, node_axis + 1)."""
    n = u.shape[node_axis]
    i, j = np.triu_indices(n, 1)
    out = np.moveaxis(u.copy(), (node_axis, node_axis + 1), (0, 1))
    out[j, i] = out[i, j]
    diag = np.arange(n)
    out[diag, diag] = 0
    return np.moveaxis(out, (0, 1), (node_axis, node_axis + 1))


def noise_labels(x, e, qx: np.ndarray, qe: np.ndarray, ux: np.ndarray, ue: np.ndarray):
    """Apply forward transitions to label arrays given explicit uniforms.

    ``ue`` must be symmetric over its two node axes; the diagonal stays 0.
    """
    x_t = sample_rows(qx, x, ux)
    e_t = sample_rows(qe, e, ue)
    n = e.shape[-1]
    e_t = e_t * (1 - np.eye(n, dtype=e_t.dtype))
    return x_t, e_t


def noise_graph(g: AttributedGraph, t: float, schedule: NoiseSchedule, marginals: MarginalPair,
                rng: np.random.Generator) -> AttributedGraph:
    bbar = schedule.beta_bar(t)
    qx = transition_closed_form(marginals.m_X, bbar)
    qe = transition_closed_form(marginals.m_E, bbar)
    ux = rng.random(g.n)
    ue = symmetric_uniforms(rng, (), g.n)
    x_t, e_t = noise_labels(g.node_labels, g.edge_labels, qx, qe, ux, ue)
    return AttributedGraph(x_t, e_t, g.a, g.b)


def gillespie_forward_many(z0, schedule: NoiseSchedule, m, t: float, rng: np.random.Generator) -> np.ndarray:
    """Event-by-event simulation of many independent chains started at ``z0``.

    The rate is ``beta(s) R_b``; since every ``R(s)`` is a multiple of ``R_b``,
    the chain is the homogeneous ``R_b`` chain run in clock ``u = beta_bar(s)``.
    """
    m = _check_prob(m)
    horizon = schedule.beta_bar(t)
    z = np.array(z0, dtype=np.int64, copy=True).reshape(-1)
    clock = np.zeros(z.shape[0])
    exit_rate = 1.0 - m
    active = exit_rate[z] > 0
    while np.any(active):
        idx = np.nonzero(active)[0]
        clock[idx] += rng.exponential(1.0 / exit_rate[z[idx]])
        jumped = clock[idx] <= horizon
        idx = idx[jumped]
        if idx.size:
            # jump target proportional to m[j] over j != current state
            w = np.tile(m, (idx.size, 1))
            w[np.arange(idx.size), z[idx]] = 0.0
            cdf = np.cumsum(w, axis=1) / w.sum(axis=1, keepdims=True)
            u = rng.random(idx.size)
            z[idx] = np.minimum((u[:, None] >= cdf).sum(axis=1), len(m) - 1)
        active[:] = False
        active[idx] = exit_rate[z[idx]] > 0
    return z


def gillespie_forward(z0: int, schedule: NoiseSchedule, m, t: float, rng: np.random.Generator) -> int:
    return int(gillespie_forward_many([z0], schedule, m, t, rng)[0])


def prior_labels(n: int, marginals: MarginalPair, rng: np.random.Generator, batch=()):
    """Node labels i.i.d. from m_X, pair labels i.i.d. from m_E (symmetric)."""
    shape = tuple(batch)
    ux = rng.random(shape + (n,))
    ue = symmetric_uniforms(rng, shape, n)
    x = np.minimum((ux[..., None] >= np.cumsum(marginals.m_X)).sum(-1), len(marginals.m_X) - 1)
    e = np.minimum((ue[..., None] >= np.cumsum(marginals.m_E)).sum(-1), len(marginals.m_E) - 1)
    e = e * (1 - np.eye(n, dtype=e.dtype))
    return x, e


def prior_sample(n: int, marginals: MarginalPair, rng: np.random.Generator) -> AttributedGraph:
    if n < 1:
        raise ValueError("n must be >= 1")
    x, e = prior_labels(n, marginals, rng)
    return AttributedGraph(x, e, len(marginals.m_X), len(marginals.m_E))
