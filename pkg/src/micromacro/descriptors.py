"""Differentiable graph statistics over soft adjacency matrices.

Every function accepts a :class:`~micromacro.tensor.Node` (or array) of shape
``(..., n, n)`` so a padded minibatch can be evaluated in one pass.  An
optional ``mask`` of shape ``(..., n)`` restricts the statistic to real nodes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import List, Optional, Sequence

import numpy as np

from . import tensor as T
from .graphs import Graph

DEGREE_FLOOR = 1e-8


@dataclass(frozen=True)
class DescriptorSpec:
    kind: str
    steps: int = 0

    KINDS = ("degree_histogram", "transition", "triangle_count")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown descriptor kind {self.kind!r}")
        if self.kind == "transition" and self.steps < 1:
            raise ValueError("transition descriptor needs steps >= 1")

    @property
    def name(self) -> str:
        if self.kind == "transition":
            return f"transition_{self.steps}"
        return self.kind

    def dimension(self, n: int, n_bins: int) -> int:
        if self.kind == "degree_histogram":
            return n_bins
        if self.kind == "transition":
            return n * n
        return 1

    @classmethod
    def parse(cls, token: str) -> "DescriptorSpec":
        token = token.strip()
        if token.startswith("transition_"):
            return cls("transition", int(token.split("_", 1)[1]))
        if token in ("degree_hist", "degree"):
            token = "degree_histogram"
        if token in ("triangles", "triangle"):
            token = "triangle_count"
        return cls(token)


@dataclass
class DescriptorSet:
    specs: List[DescriptorSpec]
    n_bins: int
    slope: float = 0.1

    def __post_init__(self):
        if not self.specs:
            raise ValueError("descriptor set must not be empty")
        if self.n_bins < 1:
            raise ValueError("n_bins must be >= 1")
        if self.slope <= 0:
            raise ValueError("slope must be positive")

    @property
    def names(self) -> List[str]:
        return [s.name for s in self.specs]

    @classmethod
    def default(cls, n_bins: int, slope: float = 0.1, steps=range(1, 6)) -> "DescriptorSet":
        specs = [DescriptorSpec("degree_histogram")]
        specs += [DescriptorSpec("transition", s) for s in steps]
        specs.append(DescriptorSpec("triangle_count"))
        return cls(specs, n_bins, slope)

    @classmethod
    def from_names(cls, names: Sequence[str], n_bins: int, slope: float = 0.1) -> "DescriptorSet":
        specs: List[DescriptorSpec] = []
        for name in names:
            if name.strip() == "default":
                specs += cls.default(n_bins, slope).specs
            else:
                specs.append(DescriptorSpec.parse(name))
        return cls(specs, n_bins, slope)


@dataclass
class DescriptorValue:
    """Statistic values flattened to ``(..., dim)``.

    ``dimension`` is the per-graph size used for MSE normalization; under
    masking it may differ from the padded width of ``value``.
    """

    spec: DescriptorSpec
    value: T.Node
    dimension: np.ndarray = field(repr=False)


def _apply_mask(a, mask):
    a = T.as_node(a)
    if mask is None:
        return a
    mask = np.asarray(mask, dtype=np.float64)
    return a * (mask[..., :, None] * mask[..., None, :])


def soft_degree(a, mask=None):
    """Row sums of the (masked) soft adjacency."""
    return T.sum_(_apply_mask(a, mask), axis=-1)


def soft_degree_histogram(a, n_bins: int, slope: float = 0.1, mask=None):
    """Triangular soft binning of node degrees into bins centred at 0..n_bins-1.

    Node i adds ``max(0, 1 - slope * |d_i - b|)`` to bin b.
    """
    if slope <= 0:
        raise ValueError("slope must be positive")
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    d = soft_degree(a, mask)
    centers = np.arange(n_bins, dtype=np.float64)
    diff = T.reshape(d, d.shape + (1,)) - centers
    member = T.maximum(1.0 - T.scale(T.abs_(diff), slope), 0.0)
    if mask is not None:
        member = member * np.asarray(mask, dtype=np.float64)[..., :, None]
    return T.sum_(member, axis=-2)


def transition_matrix(a, s: int, mask=None):
    """s-step random-walk transition matrix ``(D^-1 A)^s``."""
    return transition_powers(a, s, mask)[-1]


def transition_powers(a, s_max: int, mask=None) -> list:
    """``[P, P^2, ..., P^s_max]`` sharing intermediate products."""
    if s_max < 1:
        raise ValueError("transition steps must be >= 1")
    a = _apply_mask(a, mask)
    deg = T.sum_(a, axis=-1, keepdims=True)
    p = a * T.reciprocal(T.maximum(deg, DEGREE_FLOOR))
    powers = [p]
    for _ in range(s_max - 1):
        powers.append(T.matmul(powers[-1], p))
    return powers


def triangle_count(a, mask=None):
    """trace(A^3); six times the number of triangles on a hard graph."""
    return T.trace(T.matrix_power(_apply_mask(a, mask), 3))


def descriptor_eval(dset: DescriptorSet, a, mask=None) -> List[DescriptorValue]:
    """Evaluate every descriptor in ``dset``; values are flattened per graph."""
    a = T.as_node(a)
    lead = a.shape[:-2]
    n_pad = a.shape[-1]
    n_real = np.full(lead, n_pad, dtype=np.float64) if mask is None else np.asarray(mask).sum(axis=-1)
    steps = [s.steps for s in dset.specs if s.kind == "transition"]
    powers = transition_powers(a, max(steps), mask) if steps else []
    out = []
    for spec in dset.specs:
        if spec.kind == "degree_histogram":
            val = soft_degree_histogram(a, dset.n_bins, dset.slope, mask)
            dim = np.full(lead, float(dset.n_bins))
        elif spec.kind == "transition":
            val = T.reshape(powers[spec.steps - 1], lead + (n_pad * n_pad,))
            dim = n_real * n_real
        else:
            val = T.reshape(triangle_count(a, mask), lead + (1,))
            dim = np.ones(lead)
        out.append(DescriptorValue(spec, val, dim))
    return out


# ---------------------------------------------------------------------------
# hard statistics and oracles


def brute_force_triangles(g: Graph, limit: int = 64) -> int:
    if g.n > limit:
        raise ValueError(f"brute-force triangle oracle limited to {limit} nodes")
    a = g.adjacency
    return sum(1 for i, j, k in combinations(range(g.n), 3) if a[i, j] and a[j, k] and a[i, k])


def degree_histogram(g: Graph) -> np.ndarray:
    counts = np.bincount(g.degrees(), minlength=1).astype(np.float64)
    return counts / counts.sum()


def clustering_coefficients(g: Graph) -> np.ndarray:
    a = g.adjacency
    closed = np.diag(a @ a @ a) / 2.0
    d = a.sum(axis=1)
    pairs = d * (d - 1) / 2.0
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(pairs > 0, closed / np.where(pairs > 0, pairs, 1), 0.0)


def normalized_laplacian_spectrum(g: Graph) -> np.ndarray:
    a = g.adjacency
    d = a.sum(axis=1)
    inv = np.where(d > 0, 1.0 / np.sqrt(np.where(d > 0, d, 1)), 0.0)
    lap = np.diag((d > 0).astype(float)) - inv[:, None] * a * inv[None, :]
    # rounding keeps eigenvalues that sit on a bin edge (1.0 is common) in
    # the same bin under any node relabeling
    return np.clip(np.round(np.linalg.eigvalsh(lap), 9), 0.0, 2.0)


def diameter(g: Graph) -> int:
    """Longest finite shortest-path length."""
    from scipy.sparse.csgraph import shortest_path

    dist = shortest_path(g.adjacency, method="D", unweighted=True)
    finite = dist[np.isfinite(dist)]
    return int(finite.max()) if finite.size else 0


def hard_stats(g: Graph, clustering_bins: int = 100, spectrum_bins: int = 200) -> dict:
    """Histograms of the evaluation statistics.

    Degree is a normalized degree distribution; clustering and spectrum are
    counts over fixed bins on [0, 1] and [0, 2]; diameter is one-hot over
    0..n-1.
    """
    clus, _ = np.histogram(clustering_coefficients(g), bins=clustering_bins, range=(0.0, 1.0))
    spec, _ = np.histogram(normalized_laplacian_spectrum(g), bins=spectrum_bins, range=(0.0, 2.0))
    diam = np.zeros(max(g.n, 1))
    diam[diameter(g)] = 1.0
    return {
        "degree": degree_histogram(g),
        "clustering": clus.astype(np.float64),
        "spectrum": spec.astype(np.float64),
        "diameter": diam,
    }
