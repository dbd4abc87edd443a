"""GraphTrans: a GNN stack followed by a permutation-invariant Transformer with a <CLS> readout."""
from .config import ExperimentConfig, load_config
from .gnn import GnnConfig
from .graphdata import Dataset, Graph, load_tu_dataset
from .model import GnnClassifier, GraphTrans, ModelConfig
from .training import TrainConfig, evaluate, train
from .transformer import Readout, TransformerConfig

__all__ = [
    "Dataset",
    "ExperimentConfig",
    "GnnClassifier",
    "GnnConfig",
    "Graph",
    "GraphTrans",
    "ModelConfig",
    "Readout",
    "TrainConfig",
    "TransformerConfig",
    "evaluate",
    "load_config",
    "load_tu_dataset",
    "train",
]
