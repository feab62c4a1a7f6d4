"""Sample-quality metrics for generated graph sets.

Two families:

* statistic MMD: hard graph statistics binned into histograms, compared with
  a total-variation Gaussian kernel;
* embedding metrics: a fixed random-weight message-passing network embeds
  each graph, then MMD-RBF and k-NN precision / recall are computed on the
  embeddings.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy.spatial.distance import cdist, pdist
from scipy.special import expit
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .descriptors import hard_stats
from .graphs import Graph

STATISTICS = ("degree", "clustering", "spectrum", "diameter")
TV_BANDWIDTH = 1.0
CLUSTERING_BINS = 100
SPECTRUM_BINS = 200
BANDWIDTH_FLOOR = 1e-6
DEFAULT_K = 5


# ---------------------------------------------------------------------------
# statistic MMD


def _pad(vectors: Sequence[np.ndarray], length: int) -> np.ndarray:
    out = np.zeros((len(vectors), length))
    for i, v in enumerate(vectors):
        out[i, : len(v)] = v
    return out


def _normalize_rows(h: np.ndarray) -> np.ndarray:
    if np.any(h < 0):
        raise ValueError("histograms must be nonnegative")
    totals = h.sum(axis=-1, keepdims=True)
    if np.any(totals <= 0):
        raise ValueError("cannot normalize an all-zero histogram")
    return h / totals


def tv_distance(p, q) -> float:
    """Total variation distance between two histograms (normalized first)."""
    p = np.asarray(p, dtype=np.float64).ravel()
    q = np.asarray(q, dtype=np.float64).ravel()
    h = _normalize_rows(_pad([p, q], max(len(p), len(q))))
    return 0.5 * float(np.abs(h[0] - h[1]).sum())


def _tv_matrix(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return 0.5 * cdist(x, y, metric="cityblock")


def mmd2_tv(set_x: Sequence, set_y: Sequence, bandwidth: float = TV_BANDWIDTH) -> float:
    """Biased MMD^2 with ``k(x, y) = exp(-TV(x, y) / (2 bandwidth^2))``."""
    if len(set_x) == 0 or len(set_y) == 0:
        raise ValueError("mmd2_tv needs two non-empty sets")
    length = max(len(np.ravel(v)) for v in list(set_x) + list(set_y))
    x = _normalize_rows(_pad([np.ravel(v) for v in set_x], length))
    y = _normalize_rows(_pad([np.ravel(v) for v in set_y], length))
    scale = 1.0 / (2.0 * bandwidth ** 2)
    kxx = np.exp(-scale * _tv_matrix(x, x)).mean()
    kyy = np.exp(-scale * _tv_matrix(y, y)).mean()
    kxy = np.exp(-scale * _tv_matrix(x, y)).mean()
    return float(kxx + kyy - 2.0 * kxy)


def stat_mmd_report(generated: Sequence[Graph], test: Sequence[Graph]) -> Dict[str, float]:
    if not generated or not test:
        raise ValueError("both graph sets must be non-empty")
    gen = [hard_stats(g, CLUSTERING_BINS, SPECTRUM_BINS) for g in generated]
    ref = [hard_stats(g, CLUSTERING_BINS, SPECTRUM_BINS) for g in test]
    return {s: mmd2_tv([h[s] for h in gen], [h[s] for h in ref]) for s in STATISTICS}


# ---------------------------------------------------------------------------
# reference embedding network


class ReferenceGNN(TransformerMixin, BaseEstimator):
    """Random-weight sum-aggregation GNN used as a fixed graph embedder.

    Each round computes ``h <- sigmoid(h W_self + (A h) W_nbr)`` from constant
    unit node features; the embedding concatenates the node-wise mean and
    sum of every round, so its length is ``rounds * 2 * hidden``.  Weights
    are Gaussian scaled by ``1/sqrt(fan_in)`` and depend only on
    ``random_state``.  ``fit`` ignores its input.
    """

    def __init__(self, rounds: int = 3, hidden: int = 16, random_state: int = 0):
        self.rounds = rounds
        self.hidden = hidden
        self.random_state = random_state

    def fit(self, X=None, y=None):
        if self.rounds < 1 or self.hidden < 1:
            raise ValueError("rounds and hidden must be >= 1")
        rng = np.random.default_rng(self.random_state)
        weights = []
        fan_in = 1
        for _ in range(self.rounds):
            pair = []
            for _ in range(2):
                w = rng.standard_normal((fan_in, self.hidden)) / np.sqrt(fan_in)
                w.setflags(write=False)
                pair.append(w)
            weights.append(tuple(pair))
            fan_in = self.hidden
        self.weights_ = tuple(weights)
        self.n_features_out_ = self.rounds * 2 * self.hidden
        return self

    def _embed(self, g: Graph) -> np.ndarray:
        a = np.asarray(g.adjacency, dtype=np.float64)
        h = np.ones((g.n, 1))
        parts = []
        for w_self, w_nbr in self.weights_:
            h = expit(h @ w_self + (a @ h) @ w_nbr)
            parts += [h.mean(axis=0), h.sum(axis=0)]
        return np.concatenate(parts)

    def transform(self, X: Sequence[Graph]) -> np.ndarray:
        check_is_fitted(self, "weights_")
        graphs = list(X)
        if not graphs:
            return np.zeros((0, self.rounds * 2 * self.hidden))
        return np.stack([self._embed(g) for g in graphs])


def gnn_embed(gnn: ReferenceGNN, g: Graph) -> np.ndarray:
    if not hasattr(gnn, "weights_"):
        gnn.fit()
    return gnn.transform([g])[0]


# ---------------------------------------------------------------------------
# embedding metrics


def median_bandwidth(x: np.ndarray, y: np.ndarray) -> float:
    pooled = np.vstack([x, y])
    if len(pooled) < 2:
        return BANDWIDTH_FLOOR
    return max(float(np.median(pdist(pooled))), BANDWIDTH_FLOOR)


def mmd_rbf(emb_x, emb_y, bandwidth: Optional[float] = None) -> float:
    """Biased MMD^2 with a Gaussian kernel (median-heuristic bandwidth by default)."""
    x = np.atleast_2d(np.asarray(emb_x, dtype=np.float64))
    y = np.atleast_2d(np.asarray(emb_y, dtype=np.float64))
    if len(x) == 0 or len(y) == 0:
        raise ValueError("mmd_rbf needs two non-empty sets")
    if x.shape[1] != y.shape[1]:
        raise ValueError(f"embedding dimensions differ: {x.shape[1]} vs {y.shape[1]}")
    if bandwidth is None:
        bandwidth = median_bandwidth(x, y)
    scale = 1.0 / (2.0 * bandwidth ** 2)

    def k(a, b):
        return np.exp(-scale * cdist(a, b, "sqeuclidean")).mean()

    return float(k(x, x) + k(y, y) - 2.0 * k(x, y))


def _knn_radii(x: np.ndarray, k: int) -> np.ndarray:
    d = cdist(x, x)
    # column 0 after sorting is the point itself
    return np.sort(d, axis=1)[:, k]


def precision_recall_f1(emb_gen, emb_test, k: int = DEFAULT_K):
    """k-NN manifold precision and recall (percent) and their harmonic mean."""
    gen = np.atleast_2d(np.asarray(emb_gen, dtype=np.float64))
    test = np.atleast_2d(np.asarray(emb_test, dtype=np.float64))
    if len(gen) <= k or len(test) <= k:
        raise ValueError(f"precision/recall needs more than k={k} points per set "
                         f"(got {len(gen)} generated, {len(test)} test)")
    d = cdist(gen, test)
    precision = 100.0 * float(np.mean((d <= _knn_radii(test, k)[None, :]).any(axis=1)))
    recall = 100.0 * float(np.mean((d <= _knn_radii(gen, k)[:, None]).any(axis=0)))
    if precision + recall == 0:
        return precision, recall, 0.0
    return precision, recall, 2.0 * precision * recall / (precision + recall)


# ---------------------------------------------------------------------------
# reports


@dataclass
class MetricReport:
    degree: float
    clustering: float
    spectrum: float
    diameter: float
    mmd_rbf: float
    precision: float
    recall: float
    f1: float
    n_generated: int
    n_test: int
    config: Dict[str, object] = field(default_factory=dict)

    def __post_init__(self):
        for name in (*STATISTICS, "mmd_rbf"):
            if getattr(self, name) < -1e-12:
                raise ValueError(f"{name} MMD is negative: {getattr(self, name)}")
        if not 0.0 <= self.f1 <= 100.0:
            raise ValueError(f"f1 out of range: {self.f1}")

    @property
    def stat_mmd(self) -> Dict[str, float]:
        return {s: getattr(self, s) for s in STATISTICS}

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text

    @classmethod
    def from_json(cls, text: str) -> "MetricReport":
        return cls(**json.loads(text))


def evaluate(generated: Sequence[Graph], test: Sequence[Graph], gnn_seed: int = 0,
             k: int = DEFAULT_K, gnn: Optional[ReferenceGNN] = None) -> MetricReport:
    generated, test = list(generated), list(test)
    stats = stat_mmd_report(generated, test)
    if gnn is None:
        gnn = ReferenceGNN(random_state=gnn_seed)
    if not hasattr(gnn, "weights_"):
        gnn.fit()
    eg, et = gnn.transform(generated), gnn.transform(test)
    bw = median_bandwidth(eg, et)
    p, r, f1 = precision_recall_f1(eg, et, k)
    config = {
        "gnn_seed": gnn.random_state,
        "gnn_rounds": gnn.rounds,
        "gnn_hidden": gnn.hidden,
        "rbf_bandwidth": bw,
        "tv_bandwidth": TV_BANDWIDTH,
        "clustering_bins": CLUSTERING_BINS,
        "spectrum_bins": SPECTRUM_BINS,
        "k": k,
    }
    return MetricReport(**stats, mmd_rbf=mmd_rbf(eg, et, bw), precision=p, recall=r, f1=f1,
                        n_generated=len(generated), n_test=len(test), config=config)


def ideal_split_score(dataset: Sequence[Graph], rng=0, gnn_seed: int = 0, k: int = DEFAULT_K) -> MetricReport:
    """Metrics between two random halves of one dataset (the best attainable score)."""
    graphs = list(dataset)
    if len(graphs) < 2 * (k + 1):
        raise ValueError(f"ideal split needs at least {2 * (k + 1)} graphs")
    rng = np.random.default_rng(rng)
    order = rng.permutation(len(graphs))
    half = len(graphs) // 2
    report = evaluate([graphs[i] for i in order[:half]], [graphs[i] for i in order[half:]], gnn_seed, k)
    report.config["split"] = "50/50"
    return report
