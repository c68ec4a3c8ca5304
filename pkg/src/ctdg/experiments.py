"""Desk-scale experiment drivers shared by the scripts and the acceptance suite."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .ctmc import prior_sample
from .denoiser import DenoiserConfig, init_params
from .encoding import cycle_counts_formula
from .graphs import AttributedGraph, compute_marginals, generate_planar, sample_graph_size
from .metrics import validity_planar
from .sampling import SampleRunConfig, sample_graphs
from .schedule import NoiseSchedule
from .training import TrainConfig, train

log = logging.getLogger(__name__)

# ---------------------------------------------------------------------------
# planar


PLANAR_MODEL = DenoiserConfig(hidden_dim=64, n_layers=4, n_heads=4, rrwp_K=10, global_dim=32, edge_dim=32,
                              mlp_dim=128, precision="float32")


@dataclass
class PlanarResult:
    steps_trained: int
    train_seconds: float
    final_loss: float
    validity: list = field(default_factory=list)  # one rate per sampling seed
    baseline: float = 0.0
    sample_seconds: float = 0.0

    @property
    def mean_validity(self) -> float:
        return float(np.mean(self.validity))


def prior_validity(dataset, marginals, count: int, seed: int) -> float:
    """Validity of graphs drawn straight from the prior with dataset sizes."""
    rng = np.random.default_rng(seed)
    graphs = [prior_sample(sample_graph_size(dataset, rng), marginals, rng) for _ in range(count)]
    return float(np.mean([validity_planar(g) for g in graphs]))


def planar_run(budget_s: float = 1800.0, n_graphs: int = 200, n_range=(12, 16), samples: int = 500,
               sample_seeds=(0, 1, 2), steps: int = 100, corrector_steps: int = 10, model_cfg: DenoiserConfig = PLANAR_MODEL,
               train_cfg: TrainConfig | None = None, data_seed: int = 0, max_steps: int = 10**7) -> PlanarResult:
    """Train on Delaunay graphs for ``budget_s`` seconds of wall clock, then sample and score."""
    ds = generate_planar(n_graphs, n_range, seed=data_seed)
    marginals = compute_marginals(ds)
    schedule = NoiseSchedule()
    model = init_params(model_cfg)
    train_cfg = train_cfg or TrainConfig(lr=1e-3, steps=max_steps, batch_size=32)
    started = time.perf_counter()
    opt, losses = train(model, list(ds), schedule, marginals, train_cfg, time_budget=budget_s)
    train_s = time.perf_counter() - started
    res = PlanarResult(opt.step, train_s, float(np.mean(losses[-100:])))
    started = time.perf_counter()
    for seed in sample_seeds:
        run = SampleRunConfig.with_steps(steps, seed=seed, t_min=schedule.t_min, corrector_steps=corrector_steps)
        graphs, _ = sample_graphs(model, ds.size_histogram, samples, marginals, schedule, run)
        res.validity.append(float(np.mean([validity_planar(g) for g in graphs])))
        log.info("seed %d validity %.3f", seed, res.validity[-1])
    res.sample_seconds = time.perf_counter() - started
    res.baseline = prior_validity(ds, marginals, samples * len(sample_seeds), seed=12345)
    return res


# ---------------------------------------------------------------------------
# triangle-conditioned toy


TRIANGLE_SCALE = 10.0


def triangle_count(g: AttributedGraph) -> int:
    return int(cycle_counts_formula(g, 3).sum() // 3)


def triangle_dataset(count: int = 400, n: int = 8, seed: int = 0, p_range=(0.15, 0.65)):
    rng = np.random.default_rng(seed)
    graphs = []
    for _ in range(count):
        p = rng.uniform(*p_range)
        upper = np.triu(rng.random((n, n)) < p, 1).astype(np.int64)
        graphs.append(AttributedGraph(np.zeros(n, dtype=np.int64), upper + upper.T, 1, 2))
    return graphs


@dataclass
class GuidanceResult:
    targets: list
    error_guided: list  # mean |triangles - target| per seed at s = 1
    error_uncond: list  # same at s = -1


def guidance_run(train_steps: int = 6000, seeds=range(5), samples_per_target: int = 20,
                 targets=(1, 4, 8, 14), steps: int = 50, guided_s: float = 1.0) -> GuidanceResult:
    """Train a triangle-conditioned model on n = 8 random graphs; compare s = 1 with s = -1."""
    graphs = triangle_dataset()
    marginals = compute_marginals(graphs)
    schedule = NoiseSchedule()
    cond = np.array([[triangle_count(g) / TRIANGLE_SCALE] for g in graphs])
    cfg = DenoiserConfig(hidden_dim=32, n_layers=3, n_heads=4, rrwp_K=8, global_dim=16, edge_dim=16, mlp_dim=64,
                         conditioner_dim=1, precision="float32")
    model = init_params(cfg)
    train(model, graphs, schedule, marginals,
          TrainConfig(lr=1e-3, steps=train_steps, batch_size=32, p_uncond=0.2, seed=0), conditioners=cond)
    res = GuidanceResult(list(targets), [], [])
    for seed in seeds:
        errs = {}
        for s in (guided_s, -1.0):
            diffs = []
            for k, target in enumerate(targets):
                run = SampleRunConfig.with_steps(steps, guidance_s=s, seed=1000 * seed + k)
                out, _ = sample_graphs(model, {8: 1.0}, samples_per_target, marginals, schedule, run,
                                       y=[target / TRIANGLE_SCALE])
                diffs += [abs(triangle_count(g) - target) for g in out]
            errs[s] = float(np.mean(diffs))
        res.error_guided.append(errs[guided_s])
        res.error_uncond.append(errs[-1.0])
    return res
