"""Relative random-walk probabilities (RRWP) and exhaustive structural oracles.

Isolated nodes get an all-zero row in the normalised adjacency ``M = D^-1 A``
(no self-loop is injected).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .graphs import AttributedGraph

DEFAULT_K = 10


@dataclass(frozen=True, eq=False)
class RrwpEncoding:
    K: int
    node_enc: np.ndarray  # (n, K): return probabilities (M^k)_ii
    edge_enc: np.ndarray  # (n, n, K): (M^k)_ij, k = 0..K-1


def walk_matrix(adj: np.ndarray) -> np.ndarray:
    adj = np.asarray(adj, dtype=np.float64)
    deg = adj.sum(axis=1)
    inv = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
    return inv[:, None] * adj


def rrwp(g: AttributedGraph, K: int = DEFAULT_K) -> RrwpEncoding:
    if K < 1:
        raise ValueError("K must be >= 1")
    m = walk_matrix(g.adjacency)
    powers = [np.eye(g.n)]
    for _ in range(K - 1):
        powers.append(powers[-1] @ m)
    edge_enc = np.stack(powers, axis=-1)
    node_enc = np.stack([np.diag(p) for p in powers], axis=-1)
    return RrwpEncoding(K, node_enc, edge_enc)


def rrwp_tensor(adj: torch.Tensor, K: int) -> torch.Tensor:
    """Batched RRWP stack for dense ``(B, n, n)`` adjacency; returns ``(B, n, n, K)``."""
    deg = adj.sum(-1, keepdim=True)
    m = torch.where(deg > 0, adj / deg.clamp(min=1), torch.zeros_like(adj))
    eye = torch.eye(adj.shape[-1], dtype=adj.dtype).expand_as(adj)
    powers = [eye]
    for _ in range(K - 1):
        powers.append(powers[-1] @ m)
    return torch.stack(powers, dim=-1)


# ---------------------------------------------------------------------------
# connectivity


def oracle_connected_components(g: AttributedGraph) -> np.ndarray:
    """Component id per node: the smallest vertex index in its component (flood fill)."""
    adj = g.adjacency
    comp = np.full(g.n, -1, dtype=np.int64)
    for s in range(g.n):
        if comp[s] >= 0:
            continue
        comp[s] = s
        stack = [s]
        while stack:
            v = stack.pop()
            for u in np.nonzero(adj[v])[0]:
                if comp[u] < 0:
                    comp[u] = s
                    stack.append(u)
    return comp


def oracle_largest_cc_size(g: AttributedGraph) -> int:
    return int(np.bincount(oracle_connected_components(g)).max())


def rrwp_same_component(g: AttributedGraph) -> np.ndarray:
    """``B[v, w]``: some k < n has (M^k)_vw != 0 (the k = 0 term covers v == w).

    Uses the whole power stack rather than M^(n-1) alone; a single power misses
    pairs whose walk lengths all have the wrong parity (e.g. bipartite graphs).
    """
    enc = rrwp(g, K=max(g.n, 1))
    return (enc.edge_enc != 0).any(axis=-1)


def rrwp_components(g: AttributedGraph) -> np.ndarray:
    """Component ids read off the RRWP relation: smallest related vertex."""
    rel = rrwp_same_component(g)
    return np.array([int(np.nonzero(rel[v])[0].min()) for v in range(g.n)], dtype=np.int64)


def rrwp_largest_cc_size(g: AttributedGraph) -> int:
    """Column sums of the RRWP relation give component sizes; take the max."""
    return int(rrwp_same_component(g).sum(axis=0).max())


# ---------------------------------------------------------------------------
# cycles


def cycle_counts_formula(g: AttributedGraph, p: int) -> np.ndarray:
    """Per-node number of simple p-cycles (p in {3, 4}) from adjacency powers."""
    if p not in (3, 4):
        raise ValueError("closed forms exist only for p in {3, 4}")
    a = g.adjacency
    deg = a.sum(axis=1)
    a2 = a @ a
    if p == 3:
        return np.diag(a2 @ a) // 2
    # closed 4-walks minus the backtracking ones: v-u-v-w-v and v-u-w-u-v
    closed = np.diag(a2 @ a2)
    return (closed - deg**2 - a @ (deg - 1)) // 2


def oracle_cycle_enumeration(g: AttributedGraph, p: int, max_n: int = 10) -> np.ndarray:
    """Per-node count of simple p-cycles by DFS; each cycle counted once per member."""
    if p < 3 or p > g.n:
        if p < 3:
            raise ValueError("cycles need p >= 3")
        return np.zeros(g.n, dtype=np.int64)
    if g.n > max_n:
        raise ValueError(f"enumeration limited to n <= {max_n}")
    adj = [list(np.nonzero(row)[0]) for row in g.adjacency]
    counts = np.zeros(g.n, dtype=np.int64)
    # each cycle is found from its smallest vertex, in both directions
    for s in range(g.n):
        path = [s]
        on_path = {s}

        def dfs(v):
            if len(path) == p:
                if s in adj[v]:
                    for u in path:
                        counts[u] += 1
                return
            for u in adj[v]:
                if u > s and u not in on_path:
                    path.append(u)
                    on_path.add(u)
                    dfs(u)
                    path.pop()
                    on_path.remove(u)

        dfs(s)
    return counts // 2


def rrwp_pair_multiset(g: AttributedGraph, K: int, decimals: int = 12) -> list:
    """Sorted multiset of per-pair RRWP vectors, rounded for float comparison."""
    enc = rrwp(g, K)
    rows = np.round(enc.edge_enc.reshape(-1, K), decimals) + 0.0
    return sorted(map(tuple, rows.tolist()))
