"""Attributed graphs, permutations, isomorphism, synthetic datasets and file I/O.

Edge category 0 always means "no edge". Graphs are immutable: the label
arrays are stored read-only.
"""
from __future__ import annotations

import itertools
import warnings
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial import Delaunay

FILE_HEADER = "#cometh-graphs v1"
ISO_LIMIT = 24


class GraphFormatError(ValueError):
    """Malformed dataset file; the message carries the offending line number."""


def _frozen(arr, dtype=np.int64) -> np.ndarray:
    out = np.array(arr, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class AttributedGraph:
    node_labels: np.ndarray
    edge_labels: np.ndarray
    a: int = 1
    b: int = 2

    def __post_init__(self):
        x = _frozen(self.node_labels)
        e = _frozen(self.edge_labels)
        object.__setattr__(self, "node_labels", x)
        object.__setattr__(self, "edge_labels", e)
        n = x.shape[0]
        if x.ndim != 1 or n < 1:
            raise ValueError("node_labels must be a non-empty 1-d sequence")
        if e.shape != (n, n):
            raise ValueError(f"edge_labels must be {n}x{n}, got {e.shape}")
        if self.a < 1 or self.b < 2:
            raise ValueError("need a >= 1 node labels and b >= 2 edge labels")
        if x.min() < 0 or x.max() >= self.a:
            raise ValueError(f"node label outside [0, {self.a})")
        if e.min() < 0 or e.max() >= self.b:
            raise ValueError(f"edge label outside [0, {self.b})")
        if not np.array_equal(e, e.T):
            raise ValueError("edge_labels must be symmetric")
        if np.any(np.diag(e) != 0):
            raise ValueError("edge_labels diagonal must be 0")

    @property
    def n(self) -> int:
        return int(self.node_labels.shape[0])

    @property
    def adjacency(self) -> np.ndarray:
        return (self.edge_labels != 0).astype(np.int64)

    @property
    def num_edges(self) -> int:
        return int(np.count_nonzero(np.triu(self.edge_labels, 1)))

    def edges(self) -> list[tuple[int, int, int]]:
        iu, ju = np.nonzero(np.triu(self.edge_labels, 1))
        return [(int(i), int(j), int(self.edge_labels[i, j])) for i, j in zip(iu, ju)]

    def __eq__(self, other):
        if not isinstance(other, AttributedGraph):
            return NotImplemented
        return (
            self.a == other.a
            and self.b == other.b
            and np.array_equal(self.node_labels, other.node_labels)
            and np.array_equal(self.edge_labels, other.edge_labels)
        )

    def __hash__(self):
        return hash((self.a, self.b, self.node_labels.tobytes(), self.edge_labels.tobytes()))

    def __repr__(self):
        return f"AttributedGraph(n={self.n}, m={self.num_edges}, a={self.a}, b={self.b})"

    @classmethod
    def from_edges(cls, n: int, edges: Iterable, node_labels=None, a: int = 1, b: int = 2):
        """Build from ``(i, j)`` or ``(i, j, label)`` tuples; default edge label 1."""
        e = np.zeros((n, n), dtype=np.int64)
        for edge in edges:
            i, j = int(edge[0]), int(edge[1])
            lab = int(edge[2]) if len(edge) > 2 else 1
            e[i, j] = e[j, i] = lab
        x = np.zeros(n, dtype=np.int64) if node_labels is None else node_labels
        return cls(x, e, a, b)

    @classmethod
    def from_adjacency(cls, adj, a: int = 1, b: int = 2):
        adj = np.asarray(adj, dtype=np.int64)
        return cls(np.zeros(adj.shape[0], dtype=np.int64), adj, a, b)


@dataclass(frozen=True)
class MarginalPair:
    m_X: np.ndarray
    m_E: np.ndarray

    def __post_init__(self):
        for name in ("m_X", "m_E"):
            v = _frozen(getattr(self, name), np.float64)
            if v.ndim != 1 or np.any(v < 0) or abs(v.sum() - 1.0) > 1e-12:
                raise ValueError(f"{name} must be a probability vector, got {v}")
            object.__setattr__(self, name, v)
        if self.m_E[0] <= 0:
            warnings.warn("m_E[0] == 0: no 'no edge' mass, dataset is not sparse", stacklevel=2)


@dataclass(frozen=True)
class Permutation:
    perm: np.ndarray

    def __post_init__(self):
        p = _frozen(self.perm)
        if not np.array_equal(np.sort(p), np.arange(p.shape[0])):
            raise ValueError("perm is not a bijection on [0, n)")
        object.__setattr__(self, "perm", p)

    @property
    def n(self) -> int:
        return int(self.perm.shape[0])

    def inverse(self) -> "Permutation":
        return Permutation(np.argsort(self.perm))

    @classmethod
    def random(cls, n: int, rng: np.random.Generator) -> "Permutation":
        return cls(rng.permutation(n))


@dataclass(frozen=True)
class GraphDataset:
    graphs: tuple
    a: int
    b: int
    split: str = "train"
    size_histogram: dict = field(default=None)

    def __post_init__(self):
        graphs = tuple(self.graphs)
        object.__setattr__(self, "graphs", graphs)
        for g in graphs:
            if (g.a, g.b) != (self.a, self.b):
                raise ValueError("all graphs must share the dataset alphabets")
        if self.size_histogram is None:
            counts = Counter(g.n for g in graphs)
            total = sum(counts.values())
            hist = {n: c / total for n, c in sorted(counts.items())}
            object.__setattr__(self, "size_histogram", hist)

    def __len__(self):
        return len(self.graphs)

    def __iter__(self):
        return iter(self.graphs)

    def __getitem__(self, i):
        return self.graphs[i]

    def __eq__(self, other):
        if not isinstance(other, GraphDataset):
            return NotImplemented
        return (
            (self.a, self.b, self.split) == (other.a, other.b, other.split)
            and len(self.graphs) == len(other.graphs)
            and all(g == h for g, h in zip(self.graphs, other.graphs))
        )


def apply_permutation(g: AttributedGraph, p: Permutation) -> AttributedGraph:
    """Relabel node ``i`` as ``p(i)``."""
    if p.n != g.n:
        raise ValueError(f"permutation size {p.n} != graph size {g.n}")
    inv = np.argsort(p.perm)
    return AttributedGraph(g.node_labels[inv], g.edge_labels[np.ix_(inv, inv)], g.a, g.b)


# ---------------------------------------------------------------------------
# isomorphism


def _refine_colors(graphs: Sequence[AttributedGraph]) -> list[np.ndarray]:
    """Joint 1-WL colour refinement so colours are comparable across graphs."""
    colors = [g.node_labels.copy() for g in graphs]
    n_classes = -1
    while True:
        table: dict = {}
        new = []
        for g, c in zip(graphs, colors):
            sigs = []
            for v in range(g.n):
                nb = np.nonzero(g.edge_labels[v])[0]
                sigs.append((int(c[v]), tuple(sorted((int(g.edge_labels[v, u]), int(c[u])) for u in nb))))
            new.append(sigs)
        for sig in sorted({s for sigs in new for s in sigs}):
            table[sig] = len(table)
        colors = [np.array([table[s] for s in sigs], dtype=np.int64) for sigs in new]
        if len(table) == n_classes:
            return colors
        n_classes = len(table)


def is_isomorphic(g1: AttributedGraph, g2: AttributedGraph, limit: int = ISO_LIMIT) -> bool:
    """Exact label-preserving isomorphism test (refinement + backtracking)."""
    if (g1.a, g1.b) != (g2.a, g2.b):
        raise ValueError("graphs have different alphabets")
    if max(g1.n, g2.n) > limit:
        raise ValueError(f"isomorphism exactness only guaranteed for n <= {limit}")
    if g1.n != g2.n:
        return False
    if np.bincount(g1.node_labels, minlength=g1.a).tolist() != np.bincount(g2.node_labels, minlength=g2.a).tolist():
        return False
    if np.bincount(g1.edge_labels.ravel(), minlength=g1.b).tolist() != np.bincount(g2.edge_labels.ravel(), minlength=g2.b).tolist():
        return False
    c1, c2 = _refine_colors([g1, g2])
    if sorted(c1.tolist()) != sorted(c2.tolist()):
        return False

    n = g1.n
    e1, e2 = g1.edge_labels, g2.edge_labels
    class_size = Counter(c1.tolist())
    # rarest colour first, then prefer vertices adjacent to already-ordered ones
    order: list[int] = []
    remaining = set(range(n))
    while remaining:
        placed = set(order)

        def key(v):
            links = sum(1 for u in placed if e1[v, u] != 0)
            return (class_size[int(c1[v])], -links, v)

        v = min(remaining, key=key)
        order.append(v)
        remaining.remove(v)

    candidates = {v: [w for w in range(n) if c2[w] == c1[v]] for v in range(n)}
    mapping = [-1] * n
    used = [False] * n

    def extend(k: int) -> bool:
        if k == n:
            return True
        v = order[k]
        for w in candidates[v]:
            if used[w]:
                continue
            ok = True
            for u in order[:k]:
                if e1[v, u] != e2[w, mapping[u]]:
                    ok = False
                    break
            if ok:
                mapping[v] = w
                used[w] = True
                if extend(k + 1):
                    return True
                used[w] = False
                mapping[v] = -1
        return False

    return extend(0)


def wl_hash(g: AttributedGraph, rounds: int = 3) -> int:
    """Isomorphism-invariant bucket key (equal graphs always share it)."""
    colors = [int(c) for c in g.node_labels]
    for _ in range(rounds):
        colors = [
            hash((colors[v], tuple(sorted((int(g.edge_labels[v, u]), colors[u]) for u in np.nonzero(g.edge_labels[v])[0]))))
            for v in range(g.n)
        ]
    return hash((g.n, g.a, g.b, tuple(sorted(colors))))


# ---------------------------------------------------------------------------
# statistics


def compute_marginals(ds) -> MarginalPair:
    graphs = list(ds)
    if not graphs:
        raise ValueError("cannot compute marginals of an empty dataset")
    a, b = graphs[0].a, graphs[0].b
    cx = np.zeros(a, dtype=np.int64)
    ce = np.zeros(b, dtype=np.int64)
    for g in graphs:
        cx += np.bincount(g.node_labels, minlength=a)
        iu = np.triu_indices(g.n, 1)
        ce += np.bincount(g.edge_labels[iu], minlength=b)
    m_e = ce / ce.sum() if ce.sum() > 0 else np.eye(b)[0]
    return MarginalPair(cx / cx.sum(), m_e)


def sample_graph_size(ds: GraphDataset, rng: np.random.Generator) -> int:
    hist = ds.size_histogram
    if not hist:
        raise ValueError("empty size histogram")
    sizes = np.array(list(hist.keys()))
    probs = np.array(list(hist.values()), dtype=np.float64)
    return int(sizes[rng.choice(len(sizes), p=probs / probs.sum())])


# ---------------------------------------------------------------------------
# generators


def _has_collinear_triple(pts: np.ndarray, tol: float = 1e-12) -> bool:
    for i, j, k in itertools.combinations(range(len(pts)), 3):
        d1, d2 = pts[j] - pts[i], pts[k] - pts[i]
        if abs(d1[0] * d2[1] - d1[1] * d2[0]) < tol:
            return True
    return False


def delaunay_graph(n: int, rng: np.random.Generator, max_retries: int = 100) -> AttributedGraph:
    for _ in range(max_retries):
        pts = rng.random((n, 2))
        if _has_collinear_triple(pts):
            continue
        tri = Delaunay(pts)
        if len(tri.coplanar):
            continue
        e = np.zeros((n, n), dtype=np.int64)
        for simplex in tri.simplices:
            for i, j in itertools.combinations(simplex, 2):
                e[i, j] = e[j, i] = 1
        return AttributedGraph(np.zeros(n, dtype=np.int64), e, 1, 2)
    raise RuntimeError(f"no non-degenerate point set after {max_retries} draws")


def generate_planar(count: int, n, seed: int, split: str = "train") -> GraphDataset:
    """Delaunay triangulations of uniform points; ``n`` is an int or an inclusive (lo, hi) range."""
    lo, hi = (n, n) if np.isscalar(n) else n
    if lo < 3:
        raise ValueError("planar generator needs n >= 3")
    rng = np.random.default_rng(seed)
    graphs = [delaunay_graph(int(rng.integers(lo, hi + 1)), rng) for _ in range(count)]
    return GraphDataset(graphs, 1, 2, split)


def sbm_graph(block_sizes: Sequence[int], p_in: float, p_out: float, rng: np.random.Generator) -> AttributedGraph:
    block = np.repeat(np.arange(len(block_sizes)), block_sizes)
    n = len(block)
    probs = np.where(block[:, None] == block[None, :], p_in, p_out)
    upper = np.triu(rng.random((n, n)) < probs, 1)
    e = (upper | upper.T).astype(np.int64)
    return AttributedGraph(np.zeros(n, dtype=np.int64), e, 1, 2)


def generate_sbm(count: int, block_sizes: Sequence[int], p_in: float, p_out: float, seed: int, split: str = "train") -> GraphDataset:
    if not (0 <= p_in <= 1 and 0 <= p_out <= 1):
        raise ValueError("p_in and p_out must lie in [0, 1]")
    if not block_sizes or min(block_sizes) < 1:
        raise ValueError("block sizes must be positive")
    rng = np.random.default_rng(seed)
    return GraphDataset([sbm_graph(block_sizes, p_in, p_out, rng) for _ in range(count)], 1, 2, split)


# ---------------------------------------------------------------------------
# file format


def format_dataset(ds: GraphDataset) -> str:
    lines = [FILE_HEADER, f"#split {ds.split}"]
    for k, g in enumerate(ds.graphs):
        if k:
            lines.append("")
        lines.append(f"{g.n} {g.a} {g.b}")
        lines.append(" ".join(str(int(x)) for x in g.node_labels))
        lines.extend(f"{i} {j} {lab}" for i, j, lab in g.edges())
    return "\n".join(lines) + "\n"


def serialize_dataset(ds: GraphDataset, path) -> None:
    Path(path).write_text(format_dataset(ds))


def parse_dataset(text: str) -> GraphDataset:
    lines = text.split("\n")
    if not lines or lines[0].strip() != FILE_HEADER:
        raise GraphFormatError(f"line 1: expected header {FILE_HEADER!r}")
    split = "train"
    pos = 1
    if pos < len(lines) and lines[pos].startswith("#split"):
        parts = lines[pos].split()
        if len(parts) != 2:
            raise GraphFormatError(f"line {pos + 1}: malformed split tag")
        split = parts[1]
        pos += 1

    blocks: list[list[tuple[int, str]]] = []
    cur: list[tuple[int, str]] = []
    for lineno, raw in enumerate(lines[pos:], start=pos + 1):
        s = raw.strip()
        if not s:
            if cur:
                blocks.append(cur)
                cur = []
            continue
        cur.append((lineno, s))
    if cur:
        blocks.append(cur)

    graphs = []
    for block in blocks:
        graphs.append(_parse_block(block))
    if not graphs:
        raise GraphFormatError(f"line {len(lines)}: file contains no graphs")
    a, b = graphs[0].a, graphs[0].b
    for g, block in zip(graphs, blocks):
        if (g.a, g.b) != (a, b):
            raise GraphFormatError(f"line {block[0][0]}: alphabet ({g.a}, {g.b}) differs from ({a}, {b})")
    return GraphDataset(graphs, a, b, split)


def _ints(lineno: int, s: str, count=None) -> list[int]:
    try:
        vals = [int(tok) for tok in s.split()]
    except ValueError:
        raise GraphFormatError(f"line {lineno}: expected integers, got {s!r}") from None
    if count is not None and len(vals) != count:
        raise GraphFormatError(f"line {lineno}: expected {count} integers, got {len(vals)}")
    return vals


def _parse_block(block: list[tuple[int, str]]) -> AttributedGraph:
    lineno, s = block[0]
    n, a, b = _ints(lineno, s, 3)
    if n < 1 or a < 1 or b < 2:
        raise GraphFormatError(f"line {lineno}: invalid sizes n={n} a={a} b={b}")
    if len(block) < 2:
        raise GraphFormatError(f"line {lineno}: graph truncated, missing node labels")
    lineno, s = block[1]
    x = _ints(lineno, s, n)
    if min(x) < 0 or max(x) >= a:
        raise GraphFormatError(f"line {lineno}: node label outside [0, {a})")
    e = np.zeros((n, n), dtype=np.int64)
    for lineno, s in block[2:]:
        i, j, lab = _ints(lineno, s, 3)
        if not (0 <= i < n and 0 <= j < n):
            raise GraphFormatError(f"line {lineno}: node index out of range")
        if i == j:
            raise GraphFormatError(f"line {lineno}: self-loop on node {i}")
        if not 0 < lab < b:
            raise GraphFormatError(f"line {lineno}: edge label {lab} outside [1, {b})")
        if e[i, j] != 0:
            kind = "duplicate" if e[i, j] == lab else "asymmetric"
            raise GraphFormatError(f"line {lineno}: {kind} entry for pair ({i}, {j})")
        e[i, j] = e[j, i] = lab
    return AttributedGraph(np.array(x), e, a, b)


def deserialize_dataset(path) -> GraphDataset:
    return parse_dataset(Path(path).read_text())
