"""GraphVAE: GCN encoder with sum readout, fully connected edge decoder.

Parameters live in a flat ``dict`` of named numpy arrays.  Names are stable
and used verbatim in checkpoints::

    encoder.gcn.{i}.weight / .bias
    encoder.readout.weight / .bias
    encoder.mu.weight / .bias
    encoder.logvar.weight / .bias
    decoder.fc.{i}.weight / .bias
    decoder.norm.{i}.gain / .bias
    decoder.head.weight / .bias
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from typing import Dict, List, Sequence, Tuple

import numpy as np

from . import tensor as T
from .graphs import Graph, PaddedGraph, max_connected_component

Params = Dict[str, np.ndarray]


@dataclass
class ModelConfig:
    n_max: int
    feature_dim: int = 1
    gcn_dims: List[int] = field(default_factory=lambda: [256, 1026])
    readout_fc_dim: int = 1024
    latent_dim: int = 128
    decoder_dims: List[int] = field(default_factory=lambda: [1024, 1024, 1024])
    leaky_slope: float = T.LEAKY_SLOPE

    def __post_init__(self):
        dims = [self.n_max, self.feature_dim, self.readout_fc_dim, self.latent_dim,
                *self.gcn_dims, *self.decoder_dims]
        if self.n_max < 2:
            raise ValueError("n_max must be >= 2")
        if not self.gcn_dims or not self.decoder_dims or min(dims) < 1:
            raise ValueError(f"all model dimensions must be >= 1: {self}")

    @property
    def n_pairs(self) -> int:
        return self.n_max * (self.n_max - 1) // 2

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_params(cls, params: Params) -> "ModelConfig":
        """Recover the architecture from parameter shapes."""
        gcn = []
        i = 0
        while f"encoder.gcn.{i}.weight" in params:
            gcn.append(params[f"encoder.gcn.{i}.weight"].shape[1])
            i += 1
        dec = []
        i = 0
        while f"decoder.fc.{i}.weight" in params:
            dec.append(params[f"decoder.fc.{i}.weight"].shape[1])
            i += 1
        pairs = params["decoder.head.weight"].shape[1]
        n_max = int(round((1 + np.sqrt(1 + 8 * pairs)) / 2))
        return cls(
            n_max=n_max,
            feature_dim=params["encoder.gcn.0.weight"].shape[0],
            gcn_dims=gcn,
            readout_fc_dim=params["encoder.readout.weight"].shape[1],
            latent_dim=params["encoder.mu.weight"].shape[1],
            decoder_dims=dec,
        )


def _glorot(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_params(cfg: ModelConfig, rng) -> Params:
    """Glorot-uniform weights, zero biases, unit layer-norm gains."""
    rng = np.random.default_rng(rng)
    p: Params = {}

    def linear(name, fan_in, fan_out):
        p[f"{name}.weight"] = _glorot(rng, fan_in, fan_out)
        p[f"{name}.bias"] = np.zeros(fan_out)

    prev = cfg.feature_dim
    for i, h in enumerate(cfg.gcn_dims):
        linear(f"encoder.gcn.{i}", prev, h)
        prev = h
    linear("encoder.readout", prev, cfg.readout_fc_dim)
    linear("encoder.mu", cfg.readout_fc_dim, cfg.latent_dim)
    linear("encoder.logvar", cfg.readout_fc_dim, cfg.latent_dim)
    prev = cfg.latent_dim
    for i, h in enumerate(cfg.decoder_dims):
        linear(f"decoder.fc.{i}", prev, h)
        p[f"decoder.norm.{i}.gain"] = np.ones(h)
        p[f"decoder.norm.{i}.bias"] = np.zeros(h)
        prev = h
    linear("decoder.head", prev, cfg.n_pairs)
    return p


def encoder_params(p: Params) -> Params:
    return {k: v for k, v in p.items() if k.startswith("encoder.")}


def decoder_params(p: Params) -> Params:
    return {k: v for k, v in p.items() if k.startswith("decoder.")}


def as_leaves(p: Params) -> Dict[str, T.Node]:
    return {k: T.leaf(v, name=k) for k, v in p.items()}


def _const_params(p) -> Dict[str, T.Node]:
    return {k: (v if isinstance(v, T.Node) else T.constant(v)) for k, v in p.items()}


def normalized_propagation(adjacency: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """D^-1/2 (A + I) D^-1/2 restricted to real nodes; works on batches."""
    a = adjacency * mask[..., :, None] * mask[..., None, :]
    n = a.shape[-1]
    a_tilde = a + np.eye(n) * mask[..., None, :]
    d = a_tilde.sum(axis=-1)
    inv = np.where(d > 0, 1.0 / np.sqrt(np.where(d > 0, d, 1.0)), 0.0)
    return inv[..., :, None] * a_tilde * inv[..., None, :]


@dataclass
class Batch:
    """Stacked padded graphs."""

    adjacency: np.ndarray  # (B, N, N)
    mask: np.ndarray  # (B, N)
    features: np.ndarray  # (B, N, d)
    propagation: np.ndarray  # (B, N, N)

    @classmethod
    def stack(cls, graphs: Sequence[PaddedGraph]) -> "Batch":
        adj = np.stack([g.adjacency for g in graphs])
        mask = np.stack([g.mask for g in graphs])
        feats = np.stack([g.features for g in graphs])
        return cls(adj, mask, feats, normalized_propagation(adj, mask))

    def __len__(self):
        return self.adjacency.shape[0]


@dataclass
class Posterior:
    mu: T.Node
    logvar: T.Node


def encode(p, batch: Batch, slope: float = T.LEAKY_SLOPE) -> Posterior:
    """GCN layers, masked sum readout, one FC layer, then mu / logvar heads."""
    p = _const_params(p)
    mask = batch.mask[..., None]
    h = T.constant(batch.features)
    if h.shape[-1] != p["encoder.gcn.0.weight"].shape[0]:
        raise T.ShapeError("encode", h.shape, p["encoder.gcn.0.weight"].shape)
    i = 0
    while f"encoder.gcn.{i}.weight" in p:
        h = T.matmul(batch.propagation, T.matmul(h, p[f"encoder.gcn.{i}.weight"]))
        h = T.leaky_relu(h + p[f"encoder.gcn.{i}.bias"], slope) * mask
        i += 1
    pooled = T.sum_(h, axis=-2)
    f = T.leaky_relu(T.matmul(pooled, p["encoder.readout.weight"]) + p["encoder.readout.bias"], slope)
    mu = T.matmul(f, p["encoder.mu.weight"]) + p["encoder.mu.bias"]
    logvar = T.matmul(f, p["encoder.logvar.weight"]) + p["encoder.logvar.bias"]
    return Posterior(mu, logvar)


def reparameterize(q: Posterior, rng) -> T.Node:
    """z = mu + exp(logvar / 2) * eps with eps ~ N(0, I)."""
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    eps = rng.standard_normal(q.mu.shape)
    return q.mu + T.exp(T.scale(q.logvar, 0.5)) * eps


def decode(p, z, slope: float = T.LEAKY_SLOPE) -> T.Node:
    """Map latent codes ``(..., t)`` to symmetric soft adjacencies ``(..., n_max, n_max)``."""
    p = _const_params(p)
    h = T.as_node(z)
    if h.ndim == 1:
        h = T.reshape(h, (1, h.shape[0]))
    i = 0
    while f"decoder.fc.{i}.weight" in p:
        h = T.matmul(h, p[f"decoder.fc.{i}.weight"]) + p[f"decoder.fc.{i}.bias"]
        h = T.layer_norm(h, p[f"decoder.norm.{i}.gain"], p[f"decoder.norm.{i}.bias"])
        h = T.leaky_relu(h, slope)
        i += 1
    logits = T.matmul(h, p["decoder.head.weight"]) + p["decoder.head.bias"]
    pairs = logits.shape[-1]
    n_max = int(round((1 + np.sqrt(1 + 8 * pairs)) / 2))
    out = T.triu_to_symmetric(T.sigmoid(logits), n_max)
    if T.as_node(z).ndim == 1:
        out = T.reshape(out, (n_max, n_max))
    return out


def sample_adjacency(probs: np.ndarray, rng, mode: str = "bernoulli") -> np.ndarray:
    n = probs.shape[-1]
    iu = np.triu_indices(n, k=1)
    upper = probs[iu]
    if mode == "bernoulli":
        bits = rng.random(upper.shape) < upper
    elif mode == "threshold":
        bits = upper > 0.5
    else:
        raise ValueError(f"unknown sampling mode {mode!r}")
    a = np.zeros((n, n))
    a[iu] = bits
    return a + a.T


def sample_graphs(p: Params, count: int, rng, mode: str = "bernoulli") -> List[Graph]:
    """Draw z from the prior, decode, sample edges, keep the largest component."""
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    t = p["decoder.fc.0.weight"].shape[0]
    z = rng.standard_normal((count, t))
    probs = decode(decoder_params(p), z).value
    return [max_connected_component(Graph(sample_adjacency(pr, rng, mode))) for pr in probs]
