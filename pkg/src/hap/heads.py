"""Task heads, hierarchical readout and losses."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as tn
from .embed import glorot
from .tensor import DiffMatrix

PROB_EPS = 1e-12


@dataclass
class SimilarityConfig:
    scale: float = 0.5
    levels: int = 2
    distance: str = "euclidean"

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError("scale must be positive")
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        if self.distance != "euclidean":
            raise ValueError("only euclidean distance is supported")


@dataclass(frozen=True)
class TripletRecord:
    g1: int
    g2: int
    g3: int
    r: float

    def __post_init__(self):
        if self.g2 == self.g3:
            raise ValueError("triplet needs two distinct comparison graphs")


class ClassifierHead:
    """Two dense layers: softmax(ReLU(x W1 + b1) W2 + b2)."""

    def __init__(self, in_dim: int, hidden: int, n_classes: int, rng: np.random.Generator):
        self.n_classes = n_classes
        self.W1 = tn.param(glorot(rng, in_dim, hidden), name="W1")
        self.b1 = tn.param(np.zeros((1, hidden)), name="b1")
        self.W2 = tn.param(glorot(rng, hidden, n_classes), name="W2")
        self.b2 = tn.param(np.zeros((1, n_classes)), name="b2")

    def parameters(self) -> dict[str, DiffMatrix]:
        return {"W1": self.W1, "b1": self.b1, "W2": self.W2, "b2": self.b2}

    def logits(self, x) -> DiffMatrix:
        hidden = tn.relu(tn.as_matrix(x) @ self.W1 + self.b1)
        return hidden @ self.W2 + self.b2

    def __call__(self, x) -> DiffMatrix:
        return tn.row_softmax(self.logits(x))


def classify(head: ClassifierHead, x) -> DiffMatrix:
    return head(x)


def hierarchical_readout(levels: Sequence) -> list[DiffMatrix]:
    """Mean over cluster rows for each level's cluster-feature matrix."""
    if not levels:
        raise ValueError("hierarchical_readout needs at least one level")
    return [tn.col_mean(h) for h in levels]


def euclidean(x, y) -> DiffMatrix:
    diff = tn.as_matrix(x) - tn.as_matrix(y)
    return tn.sqrt(tn.sum_all(diff * diff))


def similarity_score(d, scale: float = 0.5):
    """exp(-scale * d); works on floats or 1x1 matrices."""
    if isinstance(d, DiffMatrix):
        return tn.exp(tn.scale(d, -scale))
    if d < 0:
        raise ValueError("distance must be nonnegative")
    return math.exp(-scale * d)


def loss_single(predictions: Sequence, labels: Sequence[int]) -> DiffMatrix:
    """Summed cross-entropy of probability rows against class indices."""
    total = None
    for p, y in zip(predictions, labels, strict=True):
        p = tn.as_matrix(p)
        pick = np.zeros((p.cols, 1))
        pick[int(y), 0] = 1.0
        prob = tn.clamp(p @ tn.const(pick), lo=PROB_EPS)
        term = -tn.log(prob)
        total = term if total is None else total + term
    if total is None:
        raise ValueError("loss_single needs at least one prediction")
    return total


def _clamped_similarity(d, scale):
    return tn.clamp(similarity_score(tn.as_matrix(d), scale), PROB_EPS, 1.0 - PROB_EPS)


def loss_pair(distances: Sequence, label: int, scale: float = 0.5, paper_literal: bool = False) -> DiffMatrix:
    """Level-averaged binary cross-entropy on s_k = exp(-scale d_k).

    ``paper_literal`` drops the negative-pair term (only y log s remains).
    """
    if not distances:
        raise ValueError("loss_pair needs at least one level distance")
    y = float(label)
    total = None
    for d in distances:
        s = _clamped_similarity(d, scale)
        term = tn.scale(tn.log(s), -y)
        if not paper_literal:
            term = term + tn.scale(tn.log(1.0 - s), -(1.0 - y))
        total = term if total is None else total + term
    return tn.scale(total, 1.0 / len(distances))


def loss_triple(d12: Sequence, d13: Sequence, r: float, paper_literal: bool = False) -> DiffMatrix:
    """Level-averaged squared error between d12 - d13 and the relative label r.

    ``paper_literal`` returns the unsquared signed residual.
    """
    if len(d12) != len(d13) or not d12:
        raise ValueError("loss_triple needs matching, non-empty distance lists")
    total = None
    for a, b in zip(d12, d13):
        resid = tn.as_matrix(a) - tn.as_matrix(b) - tn.const([[r]])
        term = resid if paper_literal else resid * resid
        total = term if total is None else total + term
    return tn.scale(total, 1.0 / len(d12))
