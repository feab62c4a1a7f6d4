"""Training loop, logging, checkpoints and run configuration files."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import tensor as T
from .descriptors import DescriptorSet
from .graphs import DatasetSplit, Graph, canonicalize, pad_to
from .model import Batch, ModelConfig, Params, as_leaves, init_params
from .objective import SigmaState, TrainConfig, descriptor_targets, mm_elbo_loss

log = logging.getLogger(__name__)


class TrainingDiverged(FloatingPointError):
    def __init__(self, epoch: int, step: int, value: float):
        self.epoch, self.step, self.value = epoch, step, value
        super().__init__(f"non-finite loss {value} at epoch {epoch}, step {step}")


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(params: Params, sigmas: Optional[SigmaState], path) -> None:
    tensors = dict(params)
    if sigmas is not None:
        tensors["sigma.__floor__"] = np.array([sigmas.floor])
        for name, v in sigmas.values.items():
            tensors[f"sigma.{name}"] = np.array([v])
    T.save_tensors(path, tensors)


def load_checkpoint(path) -> Tuple[Params, SigmaState]:
    tensors = T.load_tensors(path)
    params = {k: v.copy() for k, v in tensors.items() if not k.startswith("sigma.")}
    floor = float(tensors.get("sigma.__floor__", np.array([1e-6]))[0])
    values = {k[len("sigma."):]: float(v[0]) for k, v in tensors.items()
              if k.startswith("sigma.") and k != "sigma.__floor__"}
    return params, SigmaState(values, floor)


# ---------------------------------------------------------------------------
# log


@dataclass
class TrainLog:
    label: str = "graphvae"
    records: List[Dict[str, float]] = field(default_factory=list)

    def append(self, record: Dict[str, float]) -> None:
        if self.records and record["epoch"] <= self.records[-1]["epoch"]:
            raise ValueError("epochs must increase")
        self.records.append(record)

    def columns(self) -> List[str]:
        cols: List[str] = []
        for r in self.records:
            cols += [c for c in r if c not in cols]
        return cols

    def without_timing(self) -> List[Dict[str, float]]:
        return [{k: v for k, v in r.items() if k != "seconds"} for r in self.records]

    def to_csv(self, path) -> None:
        """CSV with a ``# model=<label>`` comment line before the header."""
        cols = self.columns()
        with open(path, "w", newline="") as fh:
            fh.write(f"# model={self.label}\n")
            writer = csv.DictWriter(fh, fieldnames=cols)
            writer.writeheader()
            for r in self.records:
                writer.writerow({c: repr(r[c]) if c in r else "" for c in cols})

    @classmethod
    def from_csv(cls, path) -> "TrainLog":
        with open(path, newline="") as fh:
            first = fh.readline().strip()
            label = first.split("=", 1)[1] if first.startswith("# model=") else "graphvae"
            rows = [{k: float(v) for k, v in row.items() if v != ""} for row in csv.DictReader(fh)]
        for r in rows:
            r["epoch"] = int(r["epoch"])
        return cls(label, rows)


@dataclass
class TrainResult:
    params: Params
    sigmas: SigmaState
    log: TrainLog
    best_params: Params
    best_val_loss: float
    model_config: ModelConfig
    descriptors: DescriptorSet


# ---------------------------------------------------------------------------
# loop


def prepare(graphs, n_max: int):
    return [pad_to(canonicalize(g), n_max) for g in graphs]


def _validation_loss(padded, params, dset, cfg, seed, epoch) -> float:
    if not padded:
        return float("nan")
    batch = Batch.stack(padded)
    rng = np.random.default_rng([seed, 7919, epoch])
    return float(mm_elbo_loss(batch, params, dset, None, cfg, rng).total.value)


def train(split: DatasetSplit, model_cfg: ModelConfig, train_cfg: TrainConfig, rng=None,
          out_dir=None, params: Optional[Params] = None) -> TrainResult:
    """Fit a GraphVAE(-MM) with Adam.

    Graphs are BFS-canonicalized and padded once.  Each step re-estimates the
    statistic variances from the minibatch before building the loss.  With
    ``out_dir`` set, ``last.ckpt`` / ``best.ckpt`` / ``final.ckpt`` and
    ``train_log.csv`` are written there.
    """
    if not split.train:
        raise ValueError("training set is empty")
    too_big = [g.n for g in split.train + split.validation if g.n > model_cfg.n_max]
    if too_big:
        raise ValueError(f"graph with {max(too_big)} nodes exceeds n_max={model_cfg.n_max}")
    seed = train_cfg.seed if rng is None else int(np.random.default_rng(rng).integers(2**31))
    init_rng, step_rng = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2)]
    if params is None:
        params = init_params(model_cfg, init_rng)
    params = {k: v.copy() for k, v in params.items()}
    dset = DescriptorSet.from_names(train_cfg.descriptors, model_cfg.n_max + 1, train_cfg.slope)
    train_pad = prepare(split.train, model_cfg.n_max)
    val_pad = prepare(split.validation, model_cfg.n_max)
    targets_cache: Dict[int, List[np.ndarray]] = {}
    if train_cfg.gamma > 0:
        for i, pg in enumerate(train_pad):
            targets_cache[i] = descriptor_targets(dset, Batch.stack([pg]))

    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    state = T.AdamState(lr=train_cfg.lr)
    clip = train_cfg.effective_grad_clip
    tlog = TrainLog(train_cfg.label)
    sigmas = SigmaState({}, train_cfg.sigma_floor)
    best_params = {k: v.copy() for k, v in params.items()}
    best_val = math.inf
    n = len(train_pad)
    bs = min(train_cfg.batch_size, n)

    for epoch in range(1, train_cfg.epochs + 1):
        t0 = time.perf_counter()
        order = step_rng.permutation(n)
        sums: Dict[str, float] = {}
        steps = 0
        for step, start in enumerate(range(0, n, bs)):
            idx = order[start:start + bs]
            batch = Batch.stack([train_pad[i] for i in idx])
            targets = None
            if train_cfg.gamma > 0:
                targets = [np.concatenate([targets_cache[i][u] for i in idx]) for u in range(len(dset.specs))]
            leaves = as_leaves(params)
            terms = mm_elbo_loss(batch, leaves, dset, None, train_cfg, step_rng, targets)
            value = float(terms.total.value)
            if not math.isfinite(value):
                raise TrainingDiverged(epoch, step, value)
            grads = T.reverse_grad(terms.total, wrt=leaves.values())
            named = {k: grads[leaf] for k, leaf in leaves.items()}
            if clip is not None:
                T.clip_grad_norm(named, clip)
            T.adam_step(params, named, state)
            sigmas = terms.sigmas
            for k, v in terms.summary().items():
                sums[k] = sums.get(k, 0.0) + v
            steps += 1
        record = {"epoch": epoch}
        record.update({k: v / steps for k, v in sums.items()})
        if train_cfg.val_every and (epoch % train_cfg.val_every == 0 or epoch == train_cfg.epochs) and val_pad:
            val = _validation_loss(val_pad, params, dset, train_cfg, seed, epoch)
            record["val_loss"] = val
            if val < best_val:
                best_val = val
                best_params = {k: v.copy() for k, v in params.items()}
                if out is not None:
                    save_checkpoint(best_params, sigmas, out / "best.ckpt")
            if out is not None:
                save_checkpoint(params, sigmas, out / "last.ckpt")
        record["seconds"] = time.perf_counter() - t0
        tlog.append(record)
        if epoch % 50 == 0:
            log.info("epoch %d loss %.4f", epoch, record["loss"])

    if not val_pad:
        best_params = {k: v.copy() for k, v in params.items()}
    if out is not None:
        save_checkpoint(params, sigmas, out / "final.ckpt")
        tlog.to_csv(out / "train_log.csv")
    return TrainResult(params, sigmas, tlog, best_params, best_val, model_cfg, dset)


# ---------------------------------------------------------------------------
# key-value run configuration

CONFIG_KEYS = {
    "dataset": str,
    "n_max": str,
    "gamma": float,
    "beta": float,
    "lr": float,
    "epochs": int,
    "batch_size": int,
    "latent_dim": int,
    "descriptors": str,
    "seed": int,
    "slope": float,
    "sigma_floor": float,
    "gcn_dims": str,
    "readout_dim": int,
    "decoder_dims": str,
    "grad_clip": float,
    "val_every": int,
    "split_seed": int,
}

CONFIG_DEFAULTS = {
    "n_max": "auto",
    "gamma": 40.0,
    "beta": 1.5e3,
    "lr": 3e-4,
    "epochs": 200,
    "batch_size": 8,
    "latent_dim": 128,
    "descriptors": "default",
    "seed": 0,
    "slope": 0.1,
    "sigma_floor": 1e-6,
    "gcn_dims": "256,1026",
    "readout_dim": 1024,
    "decoder_dims": "1024,1024,1024",
    "grad_clip": -1.0,
    "val_every": 10,
    "split_seed": 0,
}


class ConfigError(ValueError):
    pass


def read_config(path) -> dict:
    """Parse ``key = value`` lines (``#`` comments); unknown keys are rejected."""
    cfg = dict(CONFIG_DEFAULTS)
    seen = set()
    for no, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{no}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ConfigError(f"{path}:{no}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"{path}:{no}: duplicate key {key!r}")
        seen.add(key)
        try:
            cfg[key] = CONFIG_KEYS[key](value)
        except ValueError:
            raise ConfigError(f"{path}:{no}: bad value for {key}: {value!r}") from None
    if "dataset" not in cfg:
        raise ConfigError(f"{path}: missing required key 'dataset'")
    return cfg


def write_config(cfg: dict, path) -> None:
    with open(path, "w") as fh:
        for key in CONFIG_KEYS:
            if key in cfg:
                fh.write(f"{key} = {cfg[key]}\n")


def _dims(text: str) -> List[int]:
    return [int(x) for x in str(text).split(",") if x.strip()]


def configs_from_dict(cfg: dict, graphs: List[Graph]) -> Tuple[ModelConfig, TrainConfig]:
    n_max = max(g.n for g in graphs) if str(cfg["n_max"]) == "auto" else int(cfg["n_max"])
    model_cfg = ModelConfig(
        n_max=n_max,
        feature_dim=graphs[0].features.shape[1],
        gcn_dims=_dims(cfg["gcn_dims"]),
        readout_fc_dim=int(cfg["readout_dim"]),
        latent_dim=int(cfg["latent_dim"]),
        decoder_dims=_dims(cfg["decoder_dims"]),
    )
    clip = float(cfg["grad_clip"])
    train_cfg = TrainConfig(
        gamma=float(cfg["gamma"]),
        beta=float(cfg["beta"]),
        batch_size=int(cfg["batch_size"]),
        lr=float(cfg["lr"]),
        epochs=int(cfg["epochs"]),
        seed=int(cfg["seed"]),
        descriptors=[s.strip() for s in str(cfg["descriptors"]).split(",") if s.strip()],
        slope=float(cfg["slope"]),
        sigma_floor=float(cfg["sigma_floor"]),
        grad_clip=None if clip < 0 else clip,
        val_every=int(cfg["val_every"]),
    )
    return model_cfg, train_cfg
