"""Reverse-time simulation: reverse rates, tau-leaping, correctors, guidance.

The core routines act on stacked label arrays ``x`` (B, n) and ``e`` (B, n, n)
of equal-size graphs. Randomness enters only through a :class:`UniformSource`
that hands out one uniform per (dimension, target label); swapping in a
permuted source is how exchangeability is tested.
"""
from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import torch

from .ctmc import prior_labels, symmetrize_pairs, transition_closed_form
from .denoiser import Denoiser, batch_from_arrays
from .graphs import AttributedGraph, MarginalPair
from .schedule import NoiseSchedule

RATIO_FLOOR = 1e-12
PROB_FLOOR = 1e-12

ProbFn = Callable[[np.ndarray, np.ndarray, float], tuple]


@dataclass(frozen=True)
class SampleRunConfig:
    tau: float = 0.01
    corrector_steps: int = 0
    tau_c: float = 0.7
    corrector_window: float = 0.1
    guidance_s: float = 0.0
    t_min: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.t_min < 1:
            raise ValueError("t_min must lie in (0, 1)")
        if not 0 < self.tau <= 1 - self.t_min + 1e-12:
            raise ValueError("tau must lie in (0, 1 - t_min]")
        if self.corrector_steps < 0 or self.tau_c < 0:
            raise ValueError("corrector settings must be non-negative")
        if self.guidance_s < -1:
            raise ValueError("guidance strength must be >= -1")

    @classmethod
    def with_steps(cls, steps: int, **kw) -> "SampleRunConfig":
        t_min = kw.get("t_min", 0.01)
        return cls(tau=(1.0 - t_min) / steps, **kw)


@dataclass
class ReverseRates:
    node_rates: np.ndarray  # (..., n, a); zero at the current label
    edge_rates: np.ndarray  # (..., n, n, b); symmetric, zero at the current label and diagonal
    clamp_events: int = 0


@dataclass
class SampleStats:
    clamp_events: int = 0
    model_calls: int = 0
    wall_time: float = 0.0


class UniformSource:
    """Uniforms per node label target and per unordered-pair label target."""

    def __init__(self, rng: np.random.Generator):
        self.rng = rng

    def nodes(self, shape) -> np.ndarray:
        return self.rng.random(shape)

    def pairs(self, shape) -> np.ndarray:
        # shape = (B, n, n, b): mirror i < j onto j > i
        return symmetrize_pairs(self.rng.random(shape), 1)


class PermutedSource(UniformSource):
    """Wraps a source and relabels node ``i`` as ``perm[i]`` in every draw."""

    def __init__(self, base: UniformSource, perm: np.ndarray):
        self.base = base
        self.inv = np.argsort(perm)

    def nodes(self, shape):
        return self.base.nodes(shape)[:, self.inv]

    def pairs(self, shape):
        return self.base.pairs(shape)[:, self.inv][:, :, self.inv]


# ---------------------------------------------------------------------------
# rates


def _dimension_rates(z: np.ndarray, p0: np.ndarray, qbar: np.ndarray, m: np.ndarray, beta: float):
    """Reverse rate to every target label for categorical dimensions in states ``z``.

    rate(z -> k) = beta * m[z] * sum_x0 p0[x0] * qbar[x0, k] / qbar[x0, z]
    """
    denom = qbar.T[z]  # (..., S): q(z | x0) per x0
    clamped = denom < RATIO_FLOOR
    ratio = (p0 / np.maximum(denom, RATIO_FLOOR)) @ qbar
    rates = beta * m[z][..., None] * ratio
    np.put_along_axis(rates, z[..., None], 0.0, axis=-1)
    return rates, int(np.count_nonzero(clamped & (p0 > 0)))


def reverse_rate_arrays(x, e, px, pe, t: float, schedule: NoiseSchedule, marginals: MarginalPair) -> ReverseRates:
    bbar, beta = schedule.beta_bar(t), schedule.beta(t)
    qx = transition_closed_form(marginals.m_X, bbar)
    qe = transition_closed_form(marginals.m_E, bbar)
    rx, cx = _dimension_rates(x, px, qx, marginals.m_X, beta)
    re, ce = _dimension_rates(e, pe, qe, marginals.m_E, beta)
    n = e.shape[-1]
    re = re * (1.0 - np.eye(n))[..., None]
    return ReverseRates(rx, re, cx + ce)


def reverse_rates(g_t: AttributedGraph, t: float, node_probs, edge_probs, schedule: NoiseSchedule,
                  marginals: MarginalPair) -> ReverseRates:
    if t < schedule.t_min - 1e-12:
        raise ValueError("reverse rates are only evaluated for t >= t_min")
    return reverse_rate_arrays(g_t.node_labels, g_t.edge_labels, np.asarray(node_probs), np.asarray(edge_probs),
                               t, schedule, marginals)


def forward_rate_arrays(x, e, t: float, schedule: NoiseSchedule, marginals: MarginalPair) -> ReverseRates:
    """Forward rates beta(t) * m[k] towards each other label k."""
    beta = schedule.beta(t)
    rx = np.broadcast_to(beta * marginals.m_X, x.shape + marginals.m_X.shape).copy()
    re = np.broadcast_to(beta * marginals.m_E, e.shape + marginals.m_E.shape).copy()
    np.put_along_axis(rx, x[..., None], 0.0, axis=-1)
    np.put_along_axis(re, e[..., None], 0.0, axis=-1)
    re = re * (1.0 - np.eye(e.shape[-1]))[..., None]
    return ReverseRates(rx, re)


# ---------------------------------------------------------------------------
# tau-leaping


def _leap_dimension(z: np.ndarray, rates: np.ndarray, tau: float, u: np.ndarray) -> np.ndarray:
    """Poisson counts per target from one uniform each; move only on a single event."""
    lam = tau * rates
    p0 = np.exp(-lam)
    zero = u < p0
    one = ~zero & (u < p0 * (1.0 + lam))
    n_zero = zero.sum(-1)
    accept = (n_zero == rates.shape[-1] - 1) & one.any(-1)
    target = one.argmax(-1)
    return np.where(accept, target, z)


def leap_arrays(x, e, rates: ReverseRates, tau: float, source: UniformSource):
    ux = source.nodes(rates.node_rates.shape)
    ue = source.pairs(rates.edge_rates.shape)
    x_new = _leap_dimension(x, rates.node_rates, tau, ux)
    e_new = _leap_dimension(e, rates.edge_rates, tau, ue)
    n = e.shape[-1]
    e_new = e_new * (1 - np.eye(n, dtype=e_new.dtype))
    return x_new, e_new


def tau_leap_step(g_t: AttributedGraph, rates: ReverseRates, tau: float, rng) -> AttributedGraph:
    source = rng if isinstance(rng, UniformSource) else UniformSource(rng)
    r = ReverseRates(rates.node_rates[None], rates.edge_rates[None])
    x, e = leap_arrays(g_t.node_labels[None], g_t.edge_labels[None], r, tau, source)
    return AttributedGraph(x[0], e[0], g_t.a, g_t.b)


def corrector_rate_arrays(x, e, px, pe, t, schedule, marginals) -> ReverseRates:
    """``R_hat + R``: keeps q_t stationary when ``p`` is the exact posterior."""
    rev = reverse_rate_arrays(x, e, px, pe, t, schedule, marginals)
    fwd = forward_rate_arrays(x, e, t, schedule, marginals)
    return ReverseRates(rev.node_rates + fwd.node_rates, rev.edge_rates + fwd.edge_rates, rev.clamp_events)


def corrector_scale(tau: float, tau_c: float) -> float:
    """Corrector Poisson means are ``(tau_c * tau) * rate``."""
    return tau_c * tau


def corrector_step(g_t: AttributedGraph, t: float, node_probs, edge_probs, schedule: NoiseSchedule,
                   marginals: MarginalPair, tau_c: float, rng, tau: float = 0.01) -> AttributedGraph:
    rates = corrector_rate_arrays(g_t.node_labels, g_t.edge_labels, np.asarray(node_probs),
                                  np.asarray(edge_probs), t, schedule, marginals)
    return tau_leap_step(g_t, rates, corrector_scale(tau, tau_c), rng)


# ---------------------------------------------------------------------------
# guidance


def guided_probs(p_cond, p_uncond, s: float):
    """Combine in log space: log p = log p_uncond + (s + 1)(log p_cond - log p_uncond).

    Evaluated as ``p_cond**(s+1) * p_uncond**(-s)`` then row-normalised, so
    s = 0 and s = -1 reproduce the normalised inputs bit for bit.
    """
    pc = np.maximum(np.asarray(p_cond, dtype=np.float64), PROB_FLOOR)
    pu = np.maximum(np.asarray(p_uncond, dtype=np.float64), PROB_FLOOR)
    w = pc ** (s + 1.0) * pu ** (-s)
    return w / w.sum(-1, keepdims=True)


# ---------------------------------------------------------------------------
# model-backed probability functions


def model_prob_fn(model: Denoiser, y=None, s: float = 0.0) -> ProbFn:
    """``(x, e, t) -> (px, pe)`` from the denoiser, optionally guided towards ``y``."""

    @torch.no_grad()
    def run(x, e, t, cond, drop):
        batch = batch_from_arrays(x, e)
        out = model(batch, t, y=cond, drop=drop)
        px = torch.softmax(out.node_logits.double(), -1).numpy()
        pe = torch.softmax(out.edge_logits.double(), -1).numpy()
        return px, pe

    def prob_fn(x, e, t):
        B = x.shape[0]
        if model.cfg.conditioner_dim == 0 or y is None:
            return run(x, e, t, None, None)
        cond = torch.as_tensor(np.asarray(y, dtype=np.float64)).reshape(-1, model.cfg.conditioner_dim)
        cond = cond.expand(B, -1) if cond.shape[0] == 1 else cond
        if s == -1:
            return run(x, e, t, None, None)
        pc = run(x, e, t, cond, None)
        if s == 0:
            return pc
        pu = run(x, e, t, None, None)
        return guided_probs(pc[0], pu[0], s), guided_probs(pc[1], pu[1], s)

    return prob_fn


# ---------------------------------------------------------------------------
# full sampler


def sample_arrays(prob_fn: ProbFn, n: int, count: int, marginals: MarginalPair, schedule: NoiseSchedule,
                  run: SampleRunConfig, source: UniformSource, init=None, stats: Optional[SampleStats] = None):
    """Simulate ``count`` graphs of ``n`` nodes from the prior down to ``t_min``, then argmax."""
    stats = stats if stats is not None else SampleStats()
    started = time.perf_counter()
    if init is None:
        x, e = prior_labels(n, marginals, source.rng, batch=(count,))
    else:
        x, e = (np.array(a, dtype=np.int64, copy=True) for a in init)
    t = 1.0
    t_min = run.t_min
    while t > t_min + 1e-12:
        dt = min(run.tau, t - t_min)
        px, pe = prob_fn(x, e, t)
        stats.model_calls += 1
        rates = reverse_rate_arrays(x, e, px, pe, t, schedule, marginals)
        stats.clamp_events += rates.clamp_events
        x, e = leap_arrays(x, e, rates, dt, source)
        t = t - dt
        if t - t_min < 1e-12:
            t = t_min
        if run.corrector_steps and t < run.corrector_window:
            for _ in range(run.corrector_steps):
                px, pe = prob_fn(x, e, t)
                stats.model_calls += 1
                rates = corrector_rate_arrays(x, e, px, pe, t, schedule, marginals)
                stats.clamp_events += rates.clamp_events
                x, e = leap_arrays(x, e, rates, corrector_scale(run.tau, run.tau_c), source)
    px, pe = prob_fn(x, e, t_min)
    stats.model_calls += 1
    x = px.argmax(-1)
    e = pe.argmax(-1) * (1 - np.eye(n, dtype=np.int64))
    stats.wall_time += time.perf_counter() - started
    return x.astype(np.int64), e.astype(np.int64)


def sample_graph(model: Denoiser, size_histogram: dict, marginals: MarginalPair, schedule: NoiseSchedule,
                 run: SampleRunConfig, y=None, rng: Optional[np.random.Generator] = None) -> AttributedGraph:
    rng = rng if rng is not None else np.random.default_rng(run.seed)
    n = _draw_sizes(size_histogram, 1, rng)[0]
    prob_fn = model_prob_fn(model, y, run.guidance_s)
    x, e = sample_arrays(prob_fn, n, 1, marginals, schedule, run, UniformSource(rng))
    return AttributedGraph(x[0], e[0], model.cfg.a, model.cfg.b)


def _draw_sizes(size_histogram: dict, count: int, rng: np.random.Generator) -> np.ndarray:
    if not size_histogram:
        raise ValueError("empty size histogram")
    sizes = np.array(list(size_histogram.keys()))
    p = np.array(list(size_histogram.values()), dtype=np.float64)
    return sizes[rng.choice(len(sizes), size=count, p=p / p.sum())]


def _run_chunk(args):
    model, n, count, marginals, schedule, run, y, chunk_seed = args
    stats = SampleStats()
    rng = np.random.default_rng(chunk_seed)
    x, e = sample_arrays(model_prob_fn(model, y, run.guidance_s), n, count, marginals, schedule, run,
                         UniformSource(rng), stats=stats)
    return x, e, stats


def sample_graphs(model: Denoiser, size_histogram: dict, count: int, marginals: MarginalPair,
                  schedule: NoiseSchedule, run: SampleRunConfig, y=None, batch_size: int = 256,
                  workers: int = 1):
    """``count`` samples, batched by graph size; output is independent of ``workers``.

    ``y`` is one conditioner for all samples, or one row per sample.
    Returns ``(graphs, SampleStats)``.
    """
    rng = np.random.default_rng([run.seed, 0])
    sizes = _draw_sizes(size_histogram, count, rng)
    y_rows = None
    if y is not None:
        y_rows = np.asarray(y, dtype=np.float64).reshape(-1, model.cfg.conditioner_dim)
        if y_rows.shape[0] == 1:
            y_rows = np.repeat(y_rows, count, axis=0)
    jobs, slots = [], []
    for n in sorted(set(sizes.tolist())):
        idx = np.nonzero(sizes == n)[0]
        for start in range(0, len(idx), batch_size):
            part = idx[start:start + batch_size]
            yc = None if y_rows is None else y_rows[part]
            jobs.append((model, int(n), len(part), marginals, schedule, run, yc, [run.seed, 1, int(n), start]))
            slots.append(part)
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_run_chunk, jobs))
    else:
        results = [_run_chunk(j) for j in jobs]
    graphs: list = [None] * count
    stats = SampleStats()
    for part, (x, e, st) in zip(slots, results):
        for k, slot in enumerate(part):
            graphs[slot] = AttributedGraph(x[k], e[k], model.cfg.a, model.cfg.b)
        stats.clamp_events += st.clamp_events
        stats.model_calls += st.model_calls
        stats.wall_time += st.wall_time
    return graphs, stats
