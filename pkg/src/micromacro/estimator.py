"""scikit-learn style front end for the functional training API."""

from __future__ import annotations

from typing import List, Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .graphs import DatasetSplit, Graph, canonicalize, pad_to
from .model import Batch, ModelConfig, encode, sample_graphs
from .objective import TrainConfig
from .trainer import TrainLog, load_checkpoint, save_checkpoint, train


def check_graphs(graphs, name: str = "graphs", min_count: int = 1) -> List[Graph]:
    """Return ``graphs`` as a list of :class:`Graph`, converting square arrays."""
    if isinstance(graphs, Graph):
        raise TypeError(f"{name} must be a sequence of graphs, not a single Graph")
    out = []
    for i, g in enumerate(graphs):
        if isinstance(g, Graph):
            out.append(g)
            continue
        a = np.asarray(g)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"{name}[{i}] is not a square adjacency matrix (shape {a.shape})")
        out.append(Graph(a))
    if len(out) < min_count:
        raise ValueError(f"{name} needs at least {min_count} graph(s), got {len(out)}")
    return out


def check_positive(value, name: str, allow_zero: bool = False):
    if value is None or (value < 0 if allow_zero else value <= 0):
        raise ValueError(f"{name} must be {'>= 0' if allow_zero else '> 0'}, got {value!r}")
    return value


def _dims(value) -> List[int]:
    return [int(v) for v in (value if isinstance(value, (list, tuple)) else [value])]


class GraphVAE(TransformerMixin, BaseEstimator):
    """GraphVAE with optional micro-macro statistic terms.

    ``gamma=0`` trains a plain GraphVAE; ``gamma>0`` adds the calibrated
    Gaussian statistic losses.  ``transform`` returns posterior means, and
    ``sample`` draws new graphs from the prior.

    >>> from micromacro.graphs import generate_grid
    >>> est = GraphVAE(n_max=9, gcn_dims=(8,), readout_dim=8, latent_dim=2,
    ...                decoder_dims=(8,), epochs=2)
    >>> est.fit([generate_grid(3, 3), generate_grid(2, 4)]).transform([generate_grid(3, 3)]).shape
    (1, 2)
    """

    def __init__(self, n_max: Optional[int] = None, gamma: float = 40.0, beta: float = 1.5e3,
                 lr: float = 3e-4, epochs: int = 200, batch_size: int = 8, latent_dim: int = 128,
                 gcn_dims=(256, 1026), readout_dim: int = 1024, decoder_dims=(1024, 1024, 1024),
                 descriptors=("default",), slope: float = 0.1, sigma_floor: float = 1e-6,
                 grad_clip: Optional[float] = None, val_every: int = 10, random_state: int = 0):
        self.n_max = n_max
        self.gamma = gamma
        self.beta = beta
        self.lr = lr
        self.epochs = epochs
        self.batch_size = batch_size
        self.latent_dim = latent_dim
        self.gcn_dims = gcn_dims
        self.readout_dim = readout_dim
        self.decoder_dims = decoder_dims
        self.descriptors = descriptors
        self.slope = slope
        self.sigma_floor = sigma_floor
        self.grad_clip = grad_clip
        self.val_every = val_every
        self.random_state = random_state

    def _configs(self, graphs: Sequence[Graph]):
        check_positive(self.gamma, "gamma", allow_zero=True)
        check_positive(self.beta, "beta", allow_zero=True)
        check_positive(self.lr, "lr")
        n_max = self.n_max if self.n_max is not None else max(g.n for g in graphs)
        model_cfg = ModelConfig(
            n_max=int(n_max),
            feature_dim=graphs[0].features.shape[1],
            gcn_dims=_dims(self.gcn_dims),
            readout_fc_dim=int(self.readout_dim),
            latent_dim=int(self.latent_dim),
            decoder_dims=_dims(self.decoder_dims),
        )
        train_cfg = TrainConfig(
            gamma=float(self.gamma), beta=float(self.beta), batch_size=int(self.batch_size),
            lr=float(self.lr), epochs=int(self.epochs), seed=int(self.random_state),
            descriptors=list(self.descriptors), slope=float(self.slope),
            sigma_floor=float(self.sigma_floor), grad_clip=self.grad_clip, val_every=int(self.val_every),
        )
        return model_cfg, train_cfg

    def fit(self, X, y=None, validation=None):
        graphs = check_graphs(X, "X")
        val = check_graphs(validation, "validation", 0) if validation is not None else []
        model_cfg, train_cfg = self._configs(graphs + val)
        result = train(DatasetSplit(graphs, val, [], train_cfg.seed), model_cfg, train_cfg)
        self.params_ = result.best_params if val else result.params
        self.sigmas_ = result.sigmas
        self.log_: TrainLog = result.log
        self.model_config_ = model_cfg
        self.n_max_ = model_cfg.n_max
        return self

    def transform(self, X) -> np.ndarray:
        """Posterior means ``(len(X), latent_dim)``."""
        check_is_fitted(self, "params_")
        graphs = check_graphs(X, "X")
        too_big = [g.n for g in graphs if g.n > self.n_max_]
        if too_big:
            raise ValueError(f"graph with {max(too_big)} nodes exceeds n_max={self.n_max_}")
        batch = Batch.stack([pad_to(canonicalize(g), self.n_max_) for g in graphs])
        return encode(self.params_, batch).mu.value.copy()

    def sample(self, n_samples: int = 1, mode: str = "bernoulli", random_state=None) -> List[Graph]:
        check_is_fitted(self, "params_")
        check_positive(n_samples, "n_samples")
        rng = np.random.default_rng(self.random_state if random_state is None else random_state)
        return sample_graphs(self.params_, int(n_samples), rng, mode)

    def save(self, path) -> None:
        check_is_fitted(self, "params_")
        save_checkpoint(self.params_, self.sigmas_, path)

    @classmethod
    def load(cls, path, **kwargs) -> "GraphVAE":
        params, sigmas = load_checkpoint(path)
        cfg = ModelConfig.from_params(params)
        est = cls(n_max=cfg.n_max, latent_dim=cfg.latent_dim, gcn_dims=tuple(cfg.gcn_dims),
                  readout_dim=cfg.readout_fc_dim, decoder_dims=tuple(cfg.decoder_dims), **kwargs)
        est.params_, est.sigmas_, est.model_config_, est.n_max_ = params, sigmas, cfg, cfg.n_max
        return est
