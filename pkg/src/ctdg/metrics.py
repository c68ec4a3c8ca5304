"""Graph statistics, MMD, planar validity and the valid/unique/novel report.

All statistics use the unlabelled view of a graph (edge label != 0).
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import networkx as nx
import numpy as np

from .encoding import oracle_connected_components
from .graphs import AttributedGraph, is_isomorphic, wl_hash

CLUSTER_BINS = 100
SPECTRUM_BINS = 100
ORBIT_NAMES = (
    "path_end", "path_mid", "star_leaf", "star_center", "cycle",
    "paw_tail", "paw_side", "paw_center", "diamond_side", "diamond_center", "clique",
)

# ---------------------------------------------------------------------------
# per-graph statistics


def degree_histogram(g: AttributedGraph) -> np.ndarray:
    deg = g.adjacency.sum(axis=1).astype(np.int64)
    hist = np.bincount(deg, minlength=1).astype(np.float64)
    return hist / hist.sum()


def clustering_coeffs(g: AttributedGraph) -> np.ndarray:
    a = g.adjacency.astype(np.int64)
    deg = a.sum(axis=1)
    tri = np.diag(a @ a @ a) // 2
    out = np.zeros(g.n)
    ok = deg >= 2
    out[ok] = 2.0 * tri[ok] / (deg[ok] * (deg[ok] - 1))
    return out


def _orbit_of(sub: np.ndarray) -> np.ndarray | None:
    """Orbit index (0..10) per node of a 4-node induced subgraph; None if disconnected."""
    deg = sub.sum(axis=1)
    m = int(deg.sum()) // 2
    ds = tuple(sorted(deg.tolist()))
    if m == 3:
        if ds == (1, 1, 2, 2):
            return np.where(deg == 1, 0, 1)
        if ds == (1, 1, 1, 3):
            return np.where(deg == 1, 2, 3)
        return None
    if m == 4:
        if ds == (2, 2, 2, 2):
            return np.full(4, 4)
        return np.select([deg == 1, deg == 2], [5, 6], 7)
    if m == 5:
        return np.where(deg == 2, 8, 9)
    if m == 6:
        return np.full(4, 10)
    return None


def orbit4_counts(g: AttributedGraph) -> np.ndarray:
    """(n, 11) counts of each node's orbit over connected induced 4-node subgraphs."""
    a = g.adjacency.astype(np.int64)
    out = np.zeros((g.n, len(ORBIT_NAMES)), dtype=np.int64)
    for quad in itertools.combinations(range(g.n), 4):
        idx = np.array(quad)
        orb = _orbit_of(a[np.ix_(idx, idx)])
        if orb is not None:
            out[idx, orb] += 1
    return out


def laplacian_spectrum(g: AttributedGraph) -> np.ndarray:
    """Sorted eigenvalues of L = D - A."""
    a = g.adjacency.astype(np.float64)
    lap = np.diag(a.sum(axis=1)) - a
    return np.linalg.eigvalsh(lap)


# ---------------------------------------------------------------------------
# MMD


def _pad(hists: list) -> np.ndarray:
    width = max(len(h) for h in hists)
    out = np.zeros((len(hists), width))
    for k, h in enumerate(hists):
        out[k, :len(h)] = h
    return out


def _normalise(h: np.ndarray) -> np.ndarray:
    s = h.sum(axis=1, keepdims=True)
    return np.divide(h, s, out=np.zeros_like(h), where=s > 0)


def statistic_histograms(set_a: Sequence[AttributedGraph], set_b: Sequence[AttributedGraph], statistic: str):
    """Per-graph normalised histograms for both sets on a shared support."""
    graphs = list(set_a) + list(set_b)
    if statistic == "degree":
        h = _pad([degree_histogram(g) for g in graphs])
    elif statistic == "cluster":
        edges = np.linspace(0.0, 1.0, CLUSTER_BINS + 1)
        h = np.stack([np.histogram(clustering_coeffs(g), bins=edges)[0] for g in graphs]).astype(np.float64)
    elif statistic == "orbit":
        h = np.stack([orbit4_counts(g).mean(axis=0) if g.n else np.zeros(len(ORBIT_NAMES)) for g in graphs])
    elif statistic == "spectrum":
        # rounding makes the binning immune to eigensolver round-off under relabelling
        spectra = [np.round(laplacian_spectrum(g), 8) + 0.0 for g in graphs]
        top = max(max((s.max() for s in spectra if s.size), default=0.0), 1.0)
        edges = np.linspace(0.0, top * (1 + 1e-9), SPECTRUM_BINS + 1)
        h = np.stack([np.histogram(np.clip(s, 0.0, None), bins=edges)[0] for s in spectra]).astype(np.float64)
    else:
        raise ValueError(f"unknown statistic {statistic!r}")
    h = _normalise(h)
    return h[:len(set_a)], h[len(set_a):]


def gaussian_tv_kernel(p: np.ndarray, q: np.ndarray, bandwidth: float) -> float:
    d = 0.5 * float(np.abs(p - q).sum())
    return math.exp(-d * d / (2.0 * bandwidth * bandwidth))


def mmd_from_histograms(ha: np.ndarray, hb: np.ndarray, bandwidth: float = 1.0) -> float:
    """Biased MMD^2; summed with fsum so swapping the two sets gives the same bits."""
    na, nb = len(ha), len(hb)
    if na == 0 or nb == 0:
        raise ValueError("MMD needs two non-empty sets")
    terms = []
    for x in ha:
        for y in ha:
            terms.append(gaussian_tv_kernel(x, y, bandwidth) / (na * na))
    for x in hb:
        for y in hb:
            terms.append(gaussian_tv_kernel(x, y, bandwidth) / (nb * nb))
    for x in ha:
        for y in hb:
            terms.append(-2.0 * gaussian_tv_kernel(x, y, bandwidth) / (na * nb))
    return max(math.fsum(terms), 0.0)


def mmd(set_a: Sequence[AttributedGraph], set_b: Sequence[AttributedGraph], statistic: str,
        bandwidth: float = 1.0) -> float:
    if not set_a or not set_b:
        raise ValueError("MMD needs two non-empty sets")
    ha, hb = statistic_histograms(set_a, set_b, statistic)
    return mmd_from_histograms(ha, hb, bandwidth)


# ---------------------------------------------------------------------------
# validity


def is_connected(g: AttributedGraph) -> bool:
    return g.n > 0 and bool(np.all(oracle_connected_components(g) == 0))


def validity_planar(g: AttributedGraph) -> bool:
    """Connected and planar."""
    if g.n < 1:
        raise ValueError("empty graph")
    if not is_connected(g):
        return False
    if g.n >= 3 and g.num_edges > 3 * g.n - 6:
        return False
    planar, _ = nx.check_planarity(nx.from_numpy_array(g.adjacency))
    return bool(planar)


def _routes(adj, u, v, spare, k):
    """Ways to join u-v by a path whose interior is k vertices from ``spare``."""
    for inner in itertools.permutations(spare, k):
        path = (u,) + inner + (v,)
        if all(adj[path[i], path[i + 1]] for i in range(len(path) - 1)):
            yield set(inner)


def _realise(adj, missing, spare) -> bool:
    """Can every missing pattern edge be routed through disjoint spare vertices?"""
    if not missing:
        return True
    (u, v), rest = missing[0], missing[1:]
    for k in range(1, len(spare) + 1):
        for used in _routes(adj, u, v, spare, k):
            if _realise(adj, rest, [s for s in spare if s not in used]):
                return True
    return False


def kuratowski_oracle(g: AttributedGraph, max_n: int = 7) -> bool:
    """True iff g contains a subdivision of K5 or K3,3 (exhaustive; small n only).

    A pattern edge already present is always used directly, so only absent
    pattern edges need paths through the non-branch vertices.
    """
    if g.n > max_n:
        raise ValueError(f"exhaustive search limited to n <= {max_n}")
    adj = g.adjacency
    deg = adj.sum(axis=1)
    nodes = range(g.n)
    for branch in itertools.combinations(nodes, 5):
        if any(deg[v] < 4 for v in branch):
            continue
        missing = [(u, v) for u, v in itertools.combinations(branch, 2) if not adj[u, v]]
        spare = [v for v in nodes if v not in branch]
        if len(missing) <= len(spare) and _realise(adj, missing, spare):
            return True
    for six in itertools.combinations(nodes, 6):
        if any(deg[v] < 3 for v in six):
            continue
        spare = [v for v in nodes if v not in six]
        for left in itertools.combinations(six[1:], 2):
            side_a = (six[0],) + left
            side_b = [v for v in six if v not in side_a]
            missing = [(u, v) for u in side_a for v in side_b if not adj[u, v]]
            if len(missing) <= len(spare) and _realise(adj, missing, spare):
                return True
    return False


def validity_planar_oracle(g: AttributedGraph) -> bool:
    return is_connected(g) and not kuratowski_oracle(g)


# ---------------------------------------------------------------------------
# reports


@dataclass(frozen=True)
class MetricReport:
    degree_mmd: float
    cluster_mmd: float
    orbit_mmd: float
    spectrum_mmd: float
    validity: float
    uniqueness: float
    novelty: float
    vun: float
    n_generated: int
    n_reference: int

    def __post_init__(self):
        for k in ("degree_mmd", "cluster_mmd", "orbit_mmd", "spectrum_mmd"):
            if getattr(self, k) < 0:
                raise ValueError(f"{k} must be >= 0")
        if self.vun > self.validity + 1e-15:
            raise ValueError("vun cannot exceed validity")

    def to_text(self) -> str:
        return "".join(f"{k} = {_fmt(v)}\n" for k, v in asdict(self).items())

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1, sort_keys=False) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "MetricReport":
        return cls(**json.loads(text))


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, float) else str(v)


def dedup_classes(graphs: Sequence[AttributedGraph]) -> list:
    """Index of the first isomorphic graph for each graph (WL buckets, then exact test)."""
    buckets: dict = {}
    first = []
    for i, g in enumerate(graphs):
        reps = buckets.setdefault((g.n, g.num_edges, wl_hash(g)), [])
        for r in reps:
            if is_isomorphic(graphs[r], g):
                first.append(r)
                break
        else:
            reps.append(i)
            first.append(i)
    return first


def _in_set(g: AttributedGraph, index: dict) -> bool:
    return any(is_isomorphic(h, g) for h in index.get((g.n, g.num_edges, wl_hash(g)), ()))


def vun_counts(generated: Sequence[AttributedGraph], train_set: Sequence[AttributedGraph],
               validity_fn: Callable[[AttributedGraph], bool]) -> dict:
    if not generated:
        raise ValueError("no generated graphs")
    valid = [g for g in generated if validity_fn(g)]
    first = dedup_classes(valid)
    unique = [g for i, g in enumerate(valid) if first[i] == i]
    index: dict = {}
    for h in train_set:
        index.setdefault((h.n, h.num_edges, wl_hash(h)), []).append(h)
    novel = [g for g in unique if not _in_set(g, index)]
    total = len(generated)
    return {
        "validity": len(valid) / total,
        "uniqueness": len(unique) / len(valid) if valid else 0.0,
        "novelty": len(novel) / len(unique) if unique else 0.0,
        "vun": len(novel) / total,
    }


def vun_report(generated: Sequence[AttributedGraph], train_set: Sequence[AttributedGraph],
               validity_fn: Callable[[AttributedGraph], bool] = validity_planar,
               reference: Sequence[AttributedGraph] | None = None) -> MetricReport:
    """Full report; MMDs compare ``generated`` against ``reference`` (default: train_set)."""
    reference = list(train_set) if reference is None else list(reference)
    generated = list(generated)
    if not reference:
        raise ValueError("empty reference set")
    stats = {f"{s}_mmd": mmd(generated, reference, s) for s in ("degree", "cluster", "orbit", "spectrum")}
    return MetricReport(**stats, **vun_counts(generated, train_set, validity_fn),
                        n_generated=len(generated), n_reference=len(reference))
