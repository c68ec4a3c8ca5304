"""Permutation-equivariant graph transformer predicting clean labels from a noisy graph.

Layer structure follows the usual node/edge/global transformer block: edge
features modulate attention scores multiplicatively and additively, the
per-pair scores double as the edge update, and the global vector (time plus
optional conditioner) modulates both via FiLM. Everything runs in float64.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .encoding import DEFAULT_K, RrwpEncoding, rrwp_tensor
from .graphs import AttributedGraph

DTYPE = torch.float64
PRECISIONS = {"float64": torch.float64, "float32": torch.float32}
CHECKPOINT_MAGIC = b"#ctdg-checkpoint v1\n"


@dataclass(frozen=True)
class DenoiserConfig:
    a: int = 1
    b: int = 2
    hidden_dim: int = 64
    n_layers: int = 4
    n_heads: int = 4
    rrwp_K: int = DEFAULT_K
    global_dim: int = 32
    edge_dim: int = 32
    mlp_dim: int = 128
    conditioner_dim: int = 0
    seed: int = 0
    precision: str = "float64"

    def __post_init__(self):
        dims = (self.a, self.b - 1, self.hidden_dim, self.n_layers, self.n_heads, self.rrwp_K,
                self.global_dim, self.edge_dim, self.mlp_dim)
        if min(dims) < 1 or self.conditioner_dim < 0:
            raise ValueError(f"invalid denoiser dimensions: {self}")
        if self.hidden_dim % self.n_heads:
            raise ValueError("hidden_dim must be divisible by n_heads")
        if self.precision not in PRECISIONS:
            raise ValueError(f"precision must be one of {sorted(PRECISIONS)}")

    @property
    def dtype(self) -> torch.dtype:
        return PRECISIONS[self.precision]

    @property
    def head_dim(self) -> int:
        return self.hidden_dim // self.n_heads


@dataclass
class GraphBatch:
    """Padded label tensors; ``mask[b, i]`` marks real nodes."""
    x: torch.Tensor  # (B, n) long
    e: torch.Tensor  # (B, n, n) long
    mask: torch.Tensor  # (B, n) bool

    @property
    def size(self) -> int:
        return self.x.shape[0]


def collate(graphs: Sequence[AttributedGraph]) -> GraphBatch:
    n_max = max(g.n for g in graphs)
    x = torch.zeros(len(graphs), n_max, dtype=torch.long)
    e = torch.zeros(len(graphs), n_max, n_max, dtype=torch.long)
    mask = torch.zeros(len(graphs), n_max, dtype=torch.bool)
    for k, g in enumerate(graphs):
        x[k, : g.n] = torch.tensor(g.node_labels)
        e[k, : g.n, : g.n] = torch.tensor(g.edge_labels)
        mask[k, : g.n] = True
    return GraphBatch(x, e, mask)


def batch_from_arrays(x: np.ndarray, e: np.ndarray) -> GraphBatch:
    """Equal-size graphs stacked as ``(B, n)`` / ``(B, n, n)`` label arrays."""
    x = torch.as_tensor(np.asarray(x), dtype=torch.long)
    e = torch.as_tensor(np.asarray(e), dtype=torch.long)
    return GraphBatch(x, e, torch.ones(x.shape, dtype=torch.bool))


@dataclass
class DenoiserOutput:
    node_logits: torch.Tensor  # (..., n, a)
    edge_logits: torch.Tensor  # (..., n, n, b), symmetric, diagonal zero


def _mlp(d_in, d_hidden, d_out, final_act=True):
    layers = [nn.Linear(d_in, d_hidden), nn.SiLU(), nn.Linear(d_hidden, d_out)]
    if final_act:
        layers.append(nn.SiLU())
    return nn.Sequential(*layers)


def _masked_mean_std(h: torch.Tensor, w: torch.Tensor, dims) -> torch.Tensor:
    count = w.sum(dim=dims).clamp(min=1.0)
    mean = (h * w).sum(dim=dims) / count
    centred = h - mean.reshape(mean.shape[:1] + (1,) * len(dims) + mean.shape[1:])
    var = (centred**2 * w).sum(dim=dims) / count
    return torch.cat([mean, torch.sqrt(var + 1e-8)], dim=-1)


class NodeEdgeAttention(nn.Module):
    def __init__(self, cfg: DenoiserConfig):
        super().__init__()
        dx, de, dy = cfg.hidden_dim, cfg.edge_dim, cfg.global_dim
        self.n_heads, self.head_dim = cfg.n_heads, cfg.head_dim
        self.q = nn.Linear(dx, dx)
        self.k = nn.Linear(dx, dx)
        self.v = nn.Linear(dx, dx)
        self.e_mul = nn.Linear(de, dx)
        self.e_add = nn.Linear(de, dx)
        self.y_e_mul = nn.Linear(dy, dx)
        self.y_e_add = nn.Linear(dy, dx)
        self.y_x_mul = nn.Linear(dy, dx)
        self.y_x_add = nn.Linear(dy, dx)
        self.x_out = nn.Linear(dx, dx)
        self.e_out = nn.Linear(dx, de)
        self.y_y = nn.Linear(dy, dy)
        self.x_y = nn.Linear(2 * dx, dy)
        self.e_y = nn.Linear(2 * de, dy)
        self.y_out = _mlp(dy, dy, dy, final_act=False)

    def forward(self, x, e, y, node_w, pair_w):
        B, n, _ = x.shape
        H, df = self.n_heads, self.head_dim
        q = (self.q(x) * node_w).reshape(B, n, 1, H, df)
        k = (self.k(x) * node_w).reshape(B, 1, n, H, df)
        v = (self.v(x) * node_w).reshape(B, 1, n, H, df)

        scores = q * k / math.sqrt(df)
        e_mul = self.e_mul(e).reshape(B, n, n, H, df)
        e_add = self.e_add(e).reshape(B, n, n, H, df)
        scores = scores * (e_mul + 1) + e_add

        new_e = scores.reshape(B, n, n, H * df)
        new_e = self.y_e_add(y)[:, None, None] + (self.y_e_mul(y)[:, None, None] + 1) * new_e
        new_e = self.e_out(new_e) * pair_w

        valid_j = node_w[:, None, :, :, None] > 0  # (B, 1, n, 1, 1)
        attn = torch.softmax(scores.masked_fill(~valid_j, float("-inf")), dim=2)
        wv = (attn * v).sum(dim=2).reshape(B, n, H * df)
        new_x = self.y_x_add(y)[:, None] + (self.y_x_mul(y)[:, None] + 1) * wv
        new_x = self.x_out(new_x) * node_w

        pooled_x = _masked_mean_std(x, node_w, (1,))
        pooled_e = _masked_mean_std(e, pair_w, (1, 2))
        new_y = self.y_out(self.y_y(y) + self.x_y(pooled_x) + self.e_y(pooled_e))
        return new_x, new_e, new_y


class TransformerLayer(nn.Module):
    def __init__(self, cfg: DenoiserConfig):
        super().__init__()
        dx, de, dy, dff = cfg.hidden_dim, cfg.edge_dim, cfg.global_dim, cfg.mlp_dim
        self.attn = NodeEdgeAttention(cfg)
        self.norm_x1, self.norm_x2 = nn.LayerNorm(dx), nn.LayerNorm(dx)
        self.norm_e1, self.norm_e2 = nn.LayerNorm(de), nn.LayerNorm(de)
        self.norm_y1, self.norm_y2 = nn.LayerNorm(dy), nn.LayerNorm(dy)
        self.ff_x = _mlp(dx, dff, dx, final_act=False)
        self.ff_e = _mlp(de, dff, de, final_act=False)
        self.ff_y = _mlp(dy, dff, dy, final_act=False)

    def forward(self, x, e, y, node_w, pair_w):
        dx, de, dy = self.attn(x, e, y, node_w, pair_w)
        x = self.norm_x1(x + dx)
        e = self.norm_e1(e + de)
        y = self.norm_y1(y + dy)
        x = self.norm_x2(x + self.ff_x(x)) * node_w
        e = self.norm_e2(e + self.ff_e(e)) * pair_w
        y = self.norm_y2(y + self.ff_y(y))
        return x, e, y


class Denoiser(nn.Module):
    """``p(G_0 | G_t, y)`` as per-node and per-pair logits."""

    def __init__(self, cfg: DenoiserConfig):
        super().__init__()
        self.cfg = cfg
        c, K = cfg.conditioner_dim, cfg.rrwp_K
        self.mlp_in_x = _mlp(cfg.a + K + c, cfg.mlp_dim, cfg.hidden_dim)
        self.mlp_in_e = _mlp(cfg.b + K + c, cfg.mlp_dim, cfg.edge_dim)
        self.mlp_in_y = _mlp(1 + c, cfg.mlp_dim, cfg.global_dim)
        self.layers = nn.ModuleList(TransformerLayer(cfg) for _ in range(cfg.n_layers))
        self.mlp_out_x = _mlp(cfg.hidden_dim, cfg.mlp_dim, cfg.a, final_act=False)
        self.mlp_out_e = _mlp(cfg.edge_dim, cfg.mlp_dim, cfg.b, final_act=False)
        if c > 0:
            self.null_embedding = nn.Parameter(torch.zeros(c, dtype=cfg.dtype))
        else:
            self.register_parameter("null_embedding", None)
        self.to(cfg.dtype)

    def forward(self, batch: GraphBatch, t, y=None, drop=None, enc: Optional[torch.Tensor] = None) -> DenoiserOutput:
        """Logits for a padded batch.

        ``t`` is a scalar or ``(B,)``; ``y`` is ``(B, c)`` or None (null
        conditioner); ``drop[b]`` swaps row b's conditioner for the learned null
        embedding. ``enc`` optionally supplies precomputed RRWP ``(B, n, n, K)``.
        """
        cfg = self.cfg
        dt = cfg.dtype
        B, n = batch.x.shape
        node_w = batch.mask.to(dt)[..., None]
        pair_w = node_w[:, :, None] * node_w[:, None, :]
        offdiag = 1.0 - torch.eye(n, dtype=dt)[None, :, :, None]

        x1h = F.one_hot(batch.x, cfg.a).to(dt) * node_w
        e1h = F.one_hot(batch.e, cfg.b).to(dt) * pair_w * offdiag
        if enc is None:
            adj = (batch.e != 0).to(dt) * pair_w[..., 0]
            enc = rrwp_tensor(adj, cfg.rrwp_K)
        elif enc.shape != (B, n, n, cfg.rrwp_K):
            raise ValueError(f"encoding shape {tuple(enc.shape)} does not match batch ({B}, {n}, {n}, {cfg.rrwp_K})")
        enc = enc.to(dt) * pair_w
        node_enc = torch.diagonal(enc, dim1=1, dim2=2).transpose(1, 2)

        t = torch.as_tensor(t, dtype=dt).reshape(-1).expand(B)
        feats_x, feats_e, feats_y = [x1h, node_enc], [e1h, enc], [t[:, None]]
        if cfg.conditioner_dim:
            cond = self._conditioner(B, y, drop)
            feats_x.append(cond[:, None].expand(B, n, -1))
            feats_e.append(cond[:, None, None].expand(B, n, n, -1))
            feats_y.append(cond)
        elif y is not None:
            raise ValueError("model was built without a conditioner")

        x = self.mlp_in_x(torch.cat(feats_x, -1)) * node_w
        e = self.mlp_in_e(torch.cat(feats_e, -1)) * pair_w
        e = 0.5 * (e + e.transpose(1, 2))
        h_y = self.mlp_in_y(torch.cat(feats_y, -1))
        for layer in self.layers:
            x, e, h_y = layer(x, e, h_y, node_w, pair_w)

        node_logits = (self.mlp_out_x(x) + x1h) * node_w
        edge_logits = self.mlp_out_e(e) + e1h
        edge_logits = 0.5 * (edge_logits + edge_logits.transpose(1, 2))
        edge_logits = edge_logits * pair_w * offdiag
        return DenoiserOutput(node_logits, edge_logits)

    def _conditioner(self, B, y, drop):
        c = self.cfg.conditioner_dim
        null = self.null_embedding[None].expand(B, c)
        if y is None:
            return null
        y = torch.as_tensor(y, dtype=self.cfg.dtype).reshape(B, c)
        if drop is None:
            return y
        drop = torch.as_tensor(drop, dtype=torch.bool).reshape(B, 1)
        return torch.where(drop, null, y)


# ---------------------------------------------------------------------------
# functional surface


def init_params(cfg: DenoiserConfig, rng=None) -> Denoiser:
    """Fan-in scaled uniform weights, zero biases, unit LayerNorm gains, zero null embedding."""
    seed = cfg.seed if rng is None else int(np.random.default_rng(rng).integers(2**62))
    gen = torch.Generator().manual_seed(seed)
    model = Denoiser(cfg)
    with torch.no_grad():
        for mod in model.modules():
            if isinstance(mod, nn.Linear):
                bound = 1.0 / math.sqrt(mod.in_features)
                mod.weight.copy_(torch.rand(mod.weight.shape, generator=gen, dtype=cfg.dtype) * 2 * bound - bound)
                mod.bias.zero_()
            elif isinstance(mod, nn.LayerNorm):
                mod.weight.fill_(1.0)
                mod.bias.zero_()
        if model.null_embedding is not None:
            model.null_embedding.zero_()
    return model


def forward(params: Denoiser, g_t: AttributedGraph, enc: Optional[RrwpEncoding] = None, t: float = 0.5,
            y=None) -> DenoiserOutput:
    """Single-graph convenience wrapper around :meth:`Denoiser.forward`."""
    batch = collate([g_t])
    enc_t = None
    if enc is not None:
        if enc.K != params.cfg.rrwp_K:
            raise ValueError(f"encoding K={enc.K} but model expects K={params.cfg.rrwp_K}")
        enc_t = torch.from_numpy(enc.edge_enc).to(params.cfg.dtype)[None]
    y_t = None if y is None else torch.as_tensor(np.atleast_1d(y), dtype=params.cfg.dtype)[None]
    out = params(batch, t, y=y_t, enc=enc_t)
    return DenoiserOutput(out.node_logits[0], out.edge_logits[0])


def probs(out: DenoiserOutput):
    return torch.softmax(out.node_logits, dim=-1), torch.softmax(out.edge_logits, dim=-1)


def gradient(params: Denoiser, batch, loss_fn: Callable[[Denoiser, object], torch.Tensor]) -> dict:
    """Reverse-mode gradients of ``loss_fn(params, batch)`` for every named parameter."""
    params.zero_grad(set_to_none=True)
    loss = loss_fn(params, batch)
    if not torch.isfinite(loss):
        raise FloatingPointError(f"non-finite loss {loss.item()}")
    loss.backward()
    grads = {}
    for name, p in params.named_parameters():
        g = torch.zeros_like(p) if p.grad is None else p.grad.detach().clone()
        if not torch.isfinite(g).all():
            raise FloatingPointError(f"non-finite gradient in {name}")
        grads[name] = g
    return grads


# ---------------------------------------------------------------------------
# checkpoints: magic line, one JSON header line, raw little-endian float64 payload


def save_checkpoint(path, params: Denoiser, extra: Optional[dict] = None, arrays: Optional[dict] = None) -> None:
    tensors = {f"param/{k}": v.detach().numpy() for k, v in params.state_dict().items()}
    for k, v in (arrays or {}).items():
        tensors[f"state/{k}"] = np.asarray(v, dtype=np.float64)
    index, offset, chunks = [], 0, []
    for name in sorted(tensors):
        buf = np.ascontiguousarray(tensors[name], dtype="<f8").tobytes()
        index.append({"name": name, "shape": list(tensors[name].shape), "offset": offset})
        offset += len(buf)
        chunks.append(buf)
    header = {"config": asdict(params.cfg), "extra": extra or {}, "tensors": index}
    blob = CHECKPOINT_MAGIC + json.dumps(header, sort_keys=True).encode() + b"\n" + b"".join(chunks)
    Path(path).write_bytes(blob)


def load_checkpoint(path):
    """Returns ``(model, extra, arrays)``."""
    raw = Path(path).read_bytes()
    if not raw.startswith(CHECKPOINT_MAGIC):
        raise ValueError(f"{path}: not a checkpoint file")
    rest = raw[len(CHECKPOINT_MAGIC):]
    nl = rest.index(b"\n")
    header = json.loads(rest[:nl])
    payload = rest[nl + 1:]
    tensors = {}
    for item in header["tensors"]:
        count = int(np.prod(item["shape"])) if item["shape"] else 1
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=item["offset"])
        tensors[item["name"]] = arr.reshape(item["shape"]).copy()
    model = Denoiser(DenoiserConfig(**header["config"]))
    state = {k[len("param/"):]: torch.from_numpy(v) for k, v in tensors.items() if k.startswith("param/")}
    model.load_state_dict(state)
    arrays = {k[len("state/"):]: v for k, v in tensors.items() if k.startswith("state/")}
    return model, header["extra"], arrays
