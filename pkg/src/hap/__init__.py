"""Hierarchical graph pooling with cross-level attention, on a small numpy autodiff core."""

from .coarsen import AFFINITY, PAD_TRUNCATE, CoarseningLayer, baseline_pool, coarsen_forward
from .datagen import EditCostModel, PairRecord, gen_matching_dataset, ged_exact, make_triplets
from .embed import GatLayer, GcnLayer
from .graph import Graph, GraphDataset, er_random_graph, load_tu_dataset, permute_graph, write_tu_dataset
from .heads import ClassifierHead, SimilarityConfig, TripletRecord
from .model import HAPModel, ModelConfig
from .tensor import DiffMatrix, Tape, backward, grad_check
from .train import Checkpoint, TaskData, TrainConfig, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "AFFINITY", "PAD_TRUNCATE", "CoarseningLayer", "baseline_pool", "coarsen_forward",
    "EditCostModel", "PairRecord", "gen_matching_dataset", "ged_exact", "make_triplets",
    "GatLayer", "GcnLayer",
    "Graph", "GraphDataset", "er_random_graph", "load_tu_dataset", "permute_graph", "write_tu_dataset",
    "ClassifierHead", "SimilarityConfig", "TripletRecord",
    "HAPModel", "ModelConfig",
    "DiffMatrix", "Tape", "backward", "grad_check",
    "Checkpoint", "TaskData", "TrainConfig", "evaluate", "train",
    "__version__",
]
