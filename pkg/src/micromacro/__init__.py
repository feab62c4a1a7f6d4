"""GraphVAE with micro-macro (edge + graph statistic) training objectives.

The package is layered: :mod:`tensor` (reverse-mode autodiff on numpy),
:mod:`graphs`, :mod:`descriptors`, :mod:`model`, :mod:`objective`,
:mod:`trainer`, :mod:`evaluation` and the :mod:`cli`.  :class:`GraphVAE`
and :class:`ReferenceGNN` offer a scikit-learn style interface.
"""

from .descriptors import DescriptorSet, DescriptorSpec, descriptor_eval
from .estimator import GraphVAE
from .evaluation import MetricReport, ReferenceGNN, evaluate, ideal_split_score
from .graphs import DatasetSplit, Graph, load_dataset, save_dataset, split_dataset
from .model import ModelConfig
from .objective import SigmaState, TrainConfig, mm_elbo_loss
from .trainer import TrainLog, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "DatasetSplit",
    "DescriptorSet",
    "DescriptorSpec",
    "Graph",
    "GraphVAE",
    "MetricReport",
    "ModelConfig",
    "ReferenceGNN",
    "SigmaState",
    "TrainConfig",
    "TrainLog",
    "descriptor_eval",
    "evaluate",
    "ideal_split_score",
    "load_checkpoint",
    "load_dataset",
    "mm_elbo_loss",
    "save_checkpoint",
    "save_dataset",
    "split_dataset",
    "train",
]
