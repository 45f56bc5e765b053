"""HAP network: alternating embedding blocks and coarsening modules."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as tn
from .coarsen import AFFINITY, CoarseningLayer, baseline_pool
from .embed import make_layer
from .heads import ClassifierHead, euclidean, hierarchical_readout
from .tensor import DiffMatrix

POOL_KINDS = ("hap", "sum", "mean", "mean-attention")


@dataclass
class ModelConfig:
    in_dim: int
    hidden: int = 64
    layer_kind: str = "gcn"
    layers_per_block: int = 2
    clusters: tuple = (16, 1)
    tau: float = 0.1
    column_mode: str = AFFINITY
    pool: str = "hap"
    n_classes: int = 0
    seed: int = 0
    bias: bool = True

    def __post_init__(self):
        self.clusters = tuple(int(c) for c in self.clusters)
        if self.pool == "mean-att":
            self.pool = "mean-attention"
        if self.pool not in POOL_KINDS:
            raise ValueError(f"pool must be one of {POOL_KINDS}, got {self.pool!r}")
        if not self.clusters or min(self.clusters) < 1:
            raise ValueError("cluster counts must be >= 1")
        if self.layers_per_block < 1 or self.hidden < 1 or self.in_dim < 1:
            raise ValueError("layer counts and dimensions must be >= 1")


@dataclass
class GraphEncoding:
    levels: list                      # per-level cluster features (or pooled rows)
    readouts: list                    # per-level 1 x F summaries
    coarsenings: list = field(default_factory=list)

    @property
    def final(self) -> DiffMatrix:
        return self.readouts[-1]


class HAPModel:
    """Embedding blocks and coarsening modules alternated K = len(clusters) times.

    With ``pool != 'hap'`` each coarsening module is replaced by the flat
    pooler: the graph passes through unchanged and the pooled row becomes
    that level's readout.
    """

    def __init__(self, config: ModelConfig):
        self.config = config
        rng = np.random.default_rng(config.seed)
        self.blocks = []
        self.coarsen = []
        dim = config.in_dim
        for n_clusters in config.clusters:
            block = []
            for _ in range(config.layers_per_block):
                block.append(make_layer(config.layer_kind, dim, config.hidden, rng, bias=config.bias))
                dim = config.hidden
            self.blocks.append(block)
            if config.pool == "hap":
                self.coarsen.append(CoarseningLayer(dim, n_clusters, rng, tau=config.tau,
                                                    column_mode=config.column_mode))
        self.head = ClassifierHead(dim, config.hidden, config.n_classes, rng) if config.n_classes else None

    @property
    def levels(self) -> int:
        return len(self.config.clusters)

    def parameters(self) -> dict[str, DiffMatrix]:
        out = {}
        for k, block in enumerate(self.blocks):
            for i, layer in enumerate(block):
                for name, p in layer.parameters().items():
                    out[f"block{k}.layer{i}.{name}"] = p
        for k, layer in enumerate(self.coarsen):
            for name, p in layer.parameters().items():
                out[f"coarsen{k}.{name}"] = p
        if self.head is not None:
            for name, p in self.head.parameters().items():
                out[f"head.{name}"] = p
        return out

    def encode(self, adjacency, features, rng=None, training: bool = False) -> GraphEncoding:
        A = tn.as_matrix(adjacency)
        H = tn.as_matrix(features)
        levels, outputs = [], []
        for k, block in enumerate(self.blocks):
            for layer in block:
                H = layer(A, H)
            if self.config.pool == "hap":
                out = self.coarsen[k](H, A, rng=rng, training=training)
                outputs.append(out)
                H, A = out.H, out.A_sampled
                levels.append(H)
            else:
                levels.append(baseline_pool(self.config.pool, H))
        return GraphEncoding(levels, hierarchical_readout(levels), outputs)

    def encode_graph(self, g, rng=None, training: bool = False) -> GraphEncoding:
        return self.encode(g.adjacency, g.features, rng=rng, training=training)

    def predict_proba(self, enc: GraphEncoding) -> DiffMatrix:
        if self.head is None:
            raise ValueError("model was built without a classifier head (n_classes=0)")
        return self.head(enc.final)


def level_distances(a: GraphEncoding, b: GraphEncoding) -> list[DiffMatrix]:
    return [euclidean(x, y) for x, y in zip(a.readouts, b.readouts)]
