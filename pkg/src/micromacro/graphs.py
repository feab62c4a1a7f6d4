"""Graph container, synthetic generators, canonical ordering and file I/O."""

from __future__ import annotations

import math
import re
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np


class GraphFormatError(ValueError):
    """Malformed graph file."""

    def __init__(self, path, line_no, message):
        self.path = str(path)
        self.line_no = line_no
        super().__init__(f"{path}:{line_no}: {message}")


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected simple graph with a node-feature matrix.

    ``features`` defaults to a single all-ones column.
    """

    adjacency: np.ndarray
    features: Optional[np.ndarray] = None

    def __post_init__(self):
        a = np.array(self.adjacency, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
            raise ValueError(f"adjacency must be a non-empty square matrix, got shape {a.shape}")
        if not np.all((a == 0) | (a == 1)):
            raise ValueError("adjacency entries must be 0 or 1")
        if not np.array_equal(a, a.T):
            raise ValueError("adjacency must be symmetric")
        if np.any(np.diag(a) != 0):
            raise ValueError("adjacency must have a zero diagonal (no self-loops)")
        x = np.ones((a.shape[0], 1)) if self.features is None else np.array(self.features, dtype=np.float64)
        if x.ndim == 1:
            x = x[:, None]
        if x.shape[0] != a.shape[0] or x.shape[1] < 1:
            raise ValueError(f"features must have {a.shape[0]} rows and >= 1 column, got {x.shape}")
        a.setflags(write=False)
        x.setflags(write=False)
        object.__setattr__(self, "adjacency", a)
        object.__setattr__(self, "features", x)

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    @property
    def n_edges(self) -> int:
        return int(self.adjacency.sum() // 2)

    def degrees(self) -> np.ndarray:
        return self.adjacency.sum(axis=1).astype(int)

    def same_structure(self, other: "Graph") -> bool:
        return self.n == other.n and np.array_equal(self.adjacency, other.adjacency)

    def __repr__(self):
        return f"Graph(n={self.n}, edges={self.n_edges})"


def from_edges(n: int, edges, features=None) -> Graph:
    a = np.zeros((n, n))
    for u, v in edges:
        if u == v:
            raise ValueError(f"self-loop at node {u}")
        a[u, v] = a[v, u] = 1.0
    return Graph(a, features)


def to_networkx(g: Graph):
    import networkx as nx

    G = nx.Graph()
    G.add_nodes_from(range(g.n))
    iu = np.argwhere(np.triu(g.adjacency, 1) > 0)
    G.add_edges_from(map(tuple, iu.tolist()))
    return G


# ---------------------------------------------------------------------------
# generators


def generate_grid(rows: int, cols: int) -> Graph:
    """Square lattice with 4-neighbourhood edges; node id = r * cols + c."""
    if rows < 2 or cols < 2:
        raise ValueError("grid needs rows >= 2 and cols >= 2")
    edges = []
    for r in range(rows):
        for c in range(cols):
            v = r * cols + c
            if c + 1 < cols:
                edges.append((v, v + 1))
            if r + 1 < rows:
                edges.append((v, v + cols))
    return from_edges(rows * cols, edges)


def generate_triangle_grid(rows: int, cols: int) -> Graph:
    """Square lattice plus one diagonal per cell.

    Rows are indexed bottom-up, so the lower-left to upper-right diagonal
    of cell (r, c) joins (r, c) and (r + 1, c + 1).
    """
    g = generate_grid(rows, cols)
    a = g.adjacency.copy()
    for r in range(rows - 1):
        for c in range(cols - 1):
            u, v = r * cols + c, (r + 1) * cols + c + 1
            a[u, v] = a[v, u] = 1.0
    return Graph(a)


def generate_lobster(backbone_n: int = 40, p1: float = 0.5, p2: float = 0.5, rng=None,
                     min_nodes: int = 10, max_nodes: int = 100, max_attempts: int = 1000) -> Graph:
    """Random lobster: a backbone path with first- and second-level leaves.

    Resampled until ``min_nodes <= |V| <= max_nodes``.
    """
    if backbone_n < 2:
        raise ValueError("backbone_n must be >= 2")
    if not (0.0 <= p1 <= 1.0 and 0.0 <= p2 <= 1.0):
        raise ValueError("p1 and p2 must lie in [0, 1]")
    rng = np.random.default_rng(rng)
    for _ in range(max_attempts):
        edges = [(i, i + 1) for i in range(backbone_n - 1)]
        n = backbone_n
        for b in range(backbone_n):
            if rng.random() < p1:
                leaf = n
                edges.append((b, leaf))
                n += 1
                if rng.random() < p2:
                    edges.append((leaf, n))
                    n += 1
        if min_nodes <= n <= max_nodes:
            return from_edges(n, edges)
    raise RuntimeError(f"no lobster with {min_nodes} <= |V| <= {max_nodes} after {max_attempts} attempts")


# ---------------------------------------------------------------------------
# ordering and structure


def connected_components(g: Graph) -> List[List[int]]:
    """Components as sorted node lists, ordered by size (desc) then lowest node."""
    seen = np.zeros(g.n, dtype=bool)
    nbrs = [np.flatnonzero(row) for row in g.adjacency]
    comps = []
    for s in range(g.n):
        if seen[s]:
            continue
        seen[s] = True
        comp, queue = [s], deque([s])
        while queue:
            u = queue.popleft()
            for v in nbrs[u]:
                if not seen[v]:
                    seen[v] = True
                    comp.append(int(v))
                    queue.append(v)
        comps.append(sorted(comp))
    comps.sort(key=lambda c: (-len(c), c[0]))
    return comps


def bfs_order(g: Graph) -> np.ndarray:
    """Deterministic BFS node order.

    Each component (largest first) is traversed from its maximum-degree
    node, lowest index on ties, expanding neighbours in ascending order.
    """
    deg = g.degrees()
    nbrs = [np.flatnonzero(row) for row in g.adjacency]
    order: List[int] = []
    seen = np.zeros(g.n, dtype=bool)
    for comp in connected_components(g):
        start = max(comp, key=lambda v: (deg[v], -v))
        seen[start] = True
        queue = deque([start])
        while queue:
            u = queue.popleft()
            order.append(int(u))
            for v in nbrs[u]:
                if not seen[v]:
                    seen[v] = True
                    queue.append(v)
    return np.array(order, dtype=int)


def relabel(g: Graph, perm) -> Graph:
    """Reorder nodes so that new node i is old node ``perm[i]``."""
    perm = np.asarray(perm)
    if perm.shape != (g.n,) or not np.array_equal(np.sort(perm), np.arange(g.n)):
        raise ValueError(f"not a permutation of 0..{g.n - 1}: {perm!r}")
    return Graph(g.adjacency[np.ix_(perm, perm)], g.features[perm])


def canonicalize(g: Graph) -> Graph:
    return relabel(g, bfs_order(g))


def max_connected_component(g: Graph) -> Graph:
    """Induced subgraph on the largest component (ties: lowest node index)."""
    comp = connected_components(g)[0]
    if len(comp) == g.n:
        return g
    idx = np.array(comp)
    return Graph(g.adjacency[np.ix_(idx, idx)], g.features[idx])


def perturb_edges(g: Graph, rate: float, rng=None) -> Graph:
    """Flip a fraction ``rate`` of the node pairs (adds or removes edges)."""
    rng = np.random.default_rng(rng)
    iu = np.triu_indices(g.n, k=1)
    m = len(iu[0])
    k = int(round(rate * m))
    a = g.adjacency.copy()
    if k:
        pick = rng.choice(m, size=k, replace=False)
        r, c = iu[0][pick], iu[1][pick]
        a[r, c] = 1.0 - a[r, c]
        a[c, r] = a[r, c]
    return Graph(a, g.features)


# ---------------------------------------------------------------------------
# splitting and padding


@dataclass
class DatasetSplit:
    train: List[Graph]
    validation: List[Graph]
    test: List[Graph]
    seed: Optional[int] = None


def split_sizes(n: int, ratios: Sequence[float]) -> List[int]:
    raw = [r * n for r in ratios]
    sizes = [int(math.floor(x + 1e-9)) for x in raw]
    remainder = n - sum(sizes)
    by_frac = sorted(range(len(raw)), key=lambda i: -(raw[i] - sizes[i]))
    for i in by_frac[:remainder]:
        sizes[i] += 1
    return sizes


def split_dataset(graphs: Sequence[Graph], ratios=(0.7, 0.1, 0.2), seed: int = 0) -> DatasetSplit:
    graphs = list(graphs)
    if not graphs:
        raise ValueError("cannot split an empty dataset")
    if len(graphs) < 3:
        raise ValueError("need at least 3 graphs to split")
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) < 0:
        raise ValueError(f"ratios must be three non-negative numbers summing to 1, got {ratios}")
    perm = np.random.default_rng(seed).permutation(len(graphs))
    n_train, n_val, _ = split_sizes(len(graphs), ratios)
    shuffled = [graphs[i] for i in perm]
    return DatasetSplit(
        shuffled[:n_train],
        shuffled[n_train:n_train + n_val],
        shuffled[n_train + n_val:],
        seed,
    )


@dataclass(frozen=True, eq=False)
class PaddedGraph:
    adjacency: np.ndarray
    mask: np.ndarray
    features: np.ndarray
    n: int

    @property
    def n_max(self) -> int:
        return self.adjacency.shape[0]


def pad_to(g: Graph, n_max: int) -> PaddedGraph:
    if g.n > n_max:
        raise ValueError(f"graph has {g.n} nodes, more than n_max={n_max}")
    a = np.zeros((n_max, n_max))
    a[:g.n, :g.n] = g.adjacency
    x = np.zeros((n_max, g.features.shape[1]))
    x[:g.n] = g.features
    mask = np.zeros(n_max)
    mask[:g.n] = 1.0
    return PaddedGraph(a, mask, x, g.n)


# ---------------------------------------------------------------------------
# file I/O

_HEADER = re.compile(r"^n\s*=\s*(\d+)$")


def save_edge_list(g: Graph, path) -> None:
    iu = np.argwhere(np.triu(g.adjacency, 1) > 0)
    with open(path, "w") as fh:
        fh.write(f"n={g.n}\n")
        for u, v in iu:
            fh.write(f"{u} {v}\n")


def load_edge_list(path, features=None) -> Graph:
    """Read ``u v`` lines; ``#`` starts a comment; ``n=<k>`` fixes the node count."""
    n_header = None
    edges = []
    with open(path) as fh:
        for no, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            m = _HEADER.match(line)
            if m:
                n_header = int(m.group(1))
                continue
            parts = line.split()
            if len(parts) != 2:
                raise GraphFormatError(path, no, f"expected 'u v', got {line!r}")
            try:
                u, v = int(parts[0]), int(parts[1])
            except ValueError:
                raise GraphFormatError(path, no, f"non-integer node id in {line!r}") from None
            if u < 0 or v < 0:
                raise GraphFormatError(path, no, "negative node id")
            if u == v:
                raise GraphFormatError(path, no, f"self-loop at node {u}")
            edges.append((u, v))
    n = max((max(e) for e in edges), default=-1) + 1
    if n_header is not None:
        if n_header < n:
            raise GraphFormatError(path, 0, f"header n={n_header} but node id {n - 1} present")
        n = n_header
    if n < 1:
        raise GraphFormatError(path, 0, "empty graph")
    return from_edges(n, edges, features)


def save_dot(g: Graph, path, name: str = "G") -> None:
    lines = [f"graph {name} {{"]
    lines += [f"  {i};" for i in range(g.n)]
    lines += [f"  {u} -- {v};" for u, v in np.argwhere(np.triu(g.adjacency, 1) > 0)]
    lines.append("}")
    Path(path).write_text("\n".join(lines) + "\n")


_DOT_EDGE = re.compile(r"^(\d+)\s*--\s*(\d+)\s*;?$")
_DOT_NODE = re.compile(r"^(\d+)\s*;?$")


def load_dot(path) -> Graph:
    """Read the undirected DOT subset written by :func:`save_dot`."""
    text = Path(path).read_text()
    body = text[text.index("{") + 1:text.rindex("}")]
    nodes, edges = set(), []
    for stmt in body.replace(";", ";\n").splitlines():
        stmt = stmt.strip()
        if not stmt:
            continue
        m = _DOT_EDGE.match(stmt)
        if m:
            edges.append((int(m.group(1)), int(m.group(2))))
            continue
        m = _DOT_NODE.match(stmt)
        if m:
            nodes.add(int(m.group(1)))
            continue
        raise ValueError(f"{path}: unsupported DOT statement {stmt!r}")
    n = max(list(nodes) + [max(e) for e in edges] + [-1]) + 1
    return from_edges(n, edges)


MANIFEST = "manifest.txt"


def save_dataset(graphs: Sequence[Graph], directory, prefix: str = "graph") -> List[str]:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    width = max(3, len(str(len(graphs) - 1)))
    names = []
    for i, g in enumerate(graphs):
        name = f"{prefix}_{i:0{width}d}.txt"
        save_edge_list(g, d / name)
        names.append(name)
    (d / MANIFEST).write_text("\n".join(names) + "\n")
    return names


def load_dataset(directory) -> List[Graph]:
    d = Path(directory)
    manifest = d / MANIFEST
    if not manifest.exists():
        raise FileNotFoundError(f"{manifest} not found")
    names = [ln.strip() for ln in manifest.read_text().splitlines() if ln.strip() and not ln.startswith("#")]
    return [load_edge_list(d / name) for name in names]
