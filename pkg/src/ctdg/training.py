"""Cross-entropy training with conditioner dropout.

All randomness for step ``k`` comes from generators keyed on ``(seed, k, ...)``,
so a run resumed from a checkpoint replays the uninterrupted run exactly.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .ctmc import symmetrize_pairs
from .denoiser import Denoiser, DenoiserOutput, GraphBatch, collate, load_checkpoint, save_checkpoint
from .graphs import AttributedGraph, MarginalPair
from .schedule import NoiseSchedule

log = logging.getLogger(__name__)

VALIDATION_TIMES = tuple(round(0.1 * k, 1) for k in range(1, 10))


@dataclass(frozen=True)
class TrainConfig:
    lambda_edge: float = 5.0
    lr: float = 3e-4
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    batch_size: int = 32
    steps: int = 1000
    p_uncond: float = 0.1
    checkpoint_every: int = 0
    validate_every: int = 0
    grad_clip: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.lambda_edge > 0:
            raise ValueError("lambda_edge must be positive")
        if not 0 <= self.p_uncond < 1:
            raise ValueError("p_uncond must lie in [0, 1)")
        if self.batch_size < 1 or self.steps < 0:
            raise ValueError("batch_size >= 1 and steps >= 0 required")


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def cross_entropy_loss(pred: DenoiserOutput, target, lambda_edge: float, mask=None) -> torch.Tensor:
    """Summed node NLL plus ``lambda_edge`` times the NLL over unordered pairs i < j.

    Accepts a single graph (``target`` an AttributedGraph, unbatched logits) or a
    padded :class:`GraphBatch`; batches return the mean per-graph loss.
    """
    if isinstance(target, AttributedGraph):
        x0 = torch.from_numpy(np.array(target.node_labels))[None]
        e0 = torch.from_numpy(np.array(target.edge_labels))[None]
        node_logits, edge_logits = pred.node_logits[None], pred.edge_logits[None]
        mask = torch.ones_like(x0, dtype=torch.bool)
    else:
        x0, e0, mask = target.x, target.e, target.mask
        node_logits, edge_logits = pred.node_logits, pred.edge_logits
    if node_logits.shape[:2] != x0.shape or edge_logits.shape[:3] != e0.shape:
        raise ValueError("prediction and target shapes differ")
    n = x0.shape[1]
    dt = node_logits.dtype
    node_w = mask.to(dt)
    pair_w = (node_w[:, :, None] * node_w[:, None, :]) * torch.triu(torch.ones(n, n, dtype=dt), 1)
    node_nll = -F.log_softmax(node_logits, -1).gather(-1, x0[..., None])[..., 0]
    edge_nll = -F.log_softmax(edge_logits, -1).gather(-1, e0[..., None])[..., 0]
    per_graph = (node_nll * node_w).sum(1) + lambda_edge * (edge_nll * pair_w).sum((1, 2))
    loss = per_graph.mean()
    if not torch.isfinite(loss):
        raise FloatingPointError("non-finite cross-entropy")
    return loss


def adam_update(params: dict, grads: dict, state: AdamState, lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
    """Bias-corrected adaptive-moment step; ``params``/``grads`` map names to tensors."""
    b1, b2 = betas
    step = state.step + 1
    new_params, m, v = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        m[name] = b1 * state.m.get(name, torch.zeros_like(p)) + (1 - b1) * g
        v[name] = b2 * state.v.get(name, torch.zeros_like(p)) + (1 - b2) * g * g
        m_hat = m[name] / (1 - b1**step)
        v_hat = v[name] / (1 - b2**step)
        new_params[name] = p - lr * m_hat / (torch.sqrt(v_hat) + eps)
    return new_params, AdamState(step, m, v)


def _sample_rows_batched(q: np.ndarray, states: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Per-graph transition matrices ``q`` (B, S, S); states/u shaped (B, ...)."""
    cdf = np.cumsum(q, axis=-1)
    b_idx = np.arange(q.shape[0]).reshape((-1,) + (1,) * (states.ndim - 1))
    rows = cdf[b_idx, states]
    return np.minimum((u[..., None] >= rows).sum(-1), q.shape[-1] - 1)


def noise_batch(batch: GraphBatch, t: np.ndarray, schedule: NoiseSchedule, marginals: MarginalPair,
                rngs: Sequence[np.random.Generator]) -> GraphBatch:
    """Forward-noise each padded graph at its own time using its own generator."""
    from .ctmc import transition_closed_form

    B, n = batch.x.shape
    bbar = schedule.beta_bar(np.asarray(t))
    qx = transition_closed_form(marginals.m_X, bbar).reshape(B, len(marginals.m_X), -1)
    qe = transition_closed_form(marginals.m_E, bbar).reshape(B, len(marginals.m_E), -1)
    ux = np.stack([r.random(n) for r in rngs])
    ue = symmetrize_pairs(np.stack([r.random((n, n)) for r in rngs]), 1)
    x_t = _sample_rows_batched(qx, batch.x.numpy(), ux)
    e_t = _sample_rows_batched(qe, batch.e.numpy(), ue)
    mask = batch.mask.numpy()
    x_t = x_t * mask
    e_t = e_t * (mask[:, :, None] & mask[:, None, :]) * (1 - np.eye(n, dtype=e_t.dtype))
    return GraphBatch(torch.from_numpy(x_t), torch.from_numpy(e_t), batch.mask)


def _step_rngs(seed: int, step: int, size: int):
    return [np.random.default_rng([seed, step, k]) for k in range(size)]


def batch_indices(n_data: int, batch_size: int, step: int, seed: int) -> np.ndarray:
    """Epoch-wise shuffled minibatch for a given global step."""
    per_epoch = max(1, n_data // batch_size) if n_data >= batch_size else 1
    epoch, pos = divmod(step, per_epoch)
    perm = np.random.default_rng([seed, 2**31 + epoch]).permutation(n_data)
    if n_data < batch_size:
        return perm
    return perm[pos * batch_size:(pos + 1) * batch_size]


def batch_loss(model: Denoiser, graphs: Sequence[AttributedGraph], schedule: NoiseSchedule,
               marginals: MarginalPair, cfg: TrainConfig, step: int, conditioners=None) -> torch.Tensor:
    rngs = _step_rngs(cfg.seed, step, len(graphs))
    t = np.array([r.random() for r in rngs])
    drop = np.array([r.random() < cfg.p_uncond for r in rngs])
    clean = collate(graphs)
    noisy = noise_batch(clean, t, schedule, marginals, rngs)
    y = None
    if conditioners is not None:
        y = torch.as_tensor(np.asarray(conditioners, dtype=np.float64)).reshape(len(graphs), -1)
    out = model(noisy, torch.from_numpy(t), y=y, drop=torch.from_numpy(drop) if y is not None else None)
    return cross_entropy_loss(out, clean, cfg.lambda_edge)


def train_step(model: Denoiser, opt: AdamState, graphs: Sequence[AttributedGraph], schedule: NoiseSchedule,
               marginals: MarginalPair, cfg: TrainConfig, step: Optional[int] = None, conditioners=None):
    """One optimiser update on a minibatch; returns ``(opt', loss)`` and updates ``model`` in place."""
    if not graphs:
        raise ValueError("empty batch")
    step = opt.step if step is None else step
    model.zero_grad(set_to_none=True)
    loss = batch_loss(model, graphs, schedule, marginals, cfg, step, conditioners)
    loss.backward()
    params = dict(model.named_parameters())
    grads = {}
    for name, p in params.items():
        g = torch.zeros_like(p) if p.grad is None else p.grad
        if not torch.isfinite(g).all():
            raise FloatingPointError(f"non-finite gradient in {name} at step {step}")
        grads[name] = g
    if cfg.grad_clip > 0:
        total = torch.sqrt(sum((g**2).sum() for g in grads.values()))
        scale = min(1.0, cfg.grad_clip / (float(total) + 1e-12))
        grads = {k: g * scale for k, g in grads.items()}
    with torch.no_grad():
        new, opt = adam_update({k: p.detach() for k, p in params.items()}, grads, opt, cfg.lr, cfg.betas, cfg.eps)
        for name, p in params.items():
            p.copy_(new[name])
    return opt, float(loss.detach())


@torch.no_grad()
def validate(model: Denoiser, graphs: Sequence[AttributedGraph], schedule: NoiseSchedule,
             marginals: MarginalPair, lambda_edge: float = 5.0, seed: int = 0, batch_size: int = 64,
             conditioners=None) -> float:
    """Mean loss over a fixed time grid with seeded noise; no parameter updates."""
    if not graphs:
        raise ValueError("empty validation set")
    total, count = 0.0, 0
    for ti, t in enumerate(VALIDATION_TIMES):
        for start in range(0, len(graphs), batch_size):
            chunk = graphs[start:start + batch_size]
            rngs = [np.random.default_rng([seed, ti, start + k]) for k in range(len(chunk))]
            clean = collate(chunk)
            noisy = noise_batch(clean, np.full(len(chunk), t), schedule, marginals, rngs)
            y = None
            if conditioners is not None:
                y = torch.as_tensor(np.asarray(conditioners[start:start + batch_size], dtype=np.float64)).reshape(len(chunk), -1)
            out = model(noisy, t, y=y)
            total += float(cross_entropy_loss(out, clean, lambda_edge)) * len(chunk)
            count += len(chunk)
    return total / count


# ---------------------------------------------------------------------------
# loop with checkpoints


def opt_arrays(opt: AdamState) -> dict:
    arrays = {}
    for name, t in opt.m.items():
        arrays[f"adam_m/{name}"] = t.numpy()
        arrays[f"adam_v/{name}"] = opt.v[name].numpy()
    return arrays


def opt_from_arrays(step: int, arrays: dict, dtype=torch.float64) -> AdamState:
    m = {k[len("adam_m/"):]: torch.from_numpy(v).to(dtype) for k, v in arrays.items() if k.startswith("adam_m/")}
    v = {k[len("adam_v/"):]: torch.from_numpy(v).to(dtype) for k, v in arrays.items() if k.startswith("adam_v/")}
    return AdamState(step, m, v)


def save_training_state(path, model: Denoiser, opt: AdamState, extra: Optional[dict] = None) -> None:
    save_checkpoint(path, model, {"step": opt.step, **(extra or {})}, opt_arrays(opt))


def load_training_state(path):
    model, extra, arrays = load_checkpoint(path)
    return model, opt_from_arrays(int(extra.get("step", 0)), arrays, model.cfg.dtype), extra


def train(model: Denoiser, train_graphs: Sequence[AttributedGraph], schedule: NoiseSchedule,
          marginals: MarginalPair, cfg: TrainConfig, opt: Optional[AdamState] = None,
          val_graphs: Sequence[AttributedGraph] = (), out_dir=None, log_file=None,
          conditioners=None, time_budget: Optional[float] = None, extra: Optional[dict] = None):
    """Run until ``cfg.steps`` total updates (or the wall-clock budget) are done.

    Writes ``step loss lr time_ms`` lines to ``log_file``; periodic checkpoints and
    ``best.ckpt`` (lowest validation loss) go to ``out_dir``. Returns ``(opt, losses)``.
    """
    opt = opt or AdamState()
    out_dir = Path(out_dir) if out_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
    best = float("inf")
    losses = []
    started = time.perf_counter()
    fh = open(log_file, "a") if log_file else None
    try:
        while opt.step < cfg.steps:
            if time_budget is not None and time.perf_counter() - started > time_budget:
                log.info("time budget reached at step %d", opt.step)
                break
            t0 = time.perf_counter()
            idx = batch_indices(len(train_graphs), cfg.batch_size, opt.step, cfg.seed)
            cond = None if conditioners is None else np.asarray(conditioners)[idx]
            opt, loss = train_step(model, opt, [train_graphs[i] for i in idx], schedule, marginals, cfg,
                                   conditioners=cond)
            losses.append(loss)
            if fh:
                fh.write(f"{opt.step} {loss:.6f} {cfg.lr:g} {(time.perf_counter() - t0) * 1e3:.1f}\n")
                fh.flush()
            if out_dir and cfg.checkpoint_every and opt.step % cfg.checkpoint_every == 0:
                save_training_state(out_dir / f"step{opt.step:07d}.ckpt", model, opt, extra)
            if out_dir and val_graphs and cfg.validate_every and opt.step % cfg.validate_every == 0:
                val = validate(model, list(val_graphs), schedule, marginals, cfg.lambda_edge, seed=cfg.seed)
                log.info("step %d val %.4f", opt.step, val)
                if val < best:
                    best = val
                    save_training_state(out_dir / "best.ckpt", model, opt, {**(extra or {}), "val_loss": val})
    finally:
        if fh:
            fh.close()
    if out_dir:
        save_training_state(out_dir / "last.ckpt", model, opt, extra)
    return opt, losses
