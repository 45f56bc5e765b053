"""Graph coarsening: content matrix, cross-level attention, cluster formation, soft sampling.

Pipeline for one module (N source nodes, N' target clusters)::

    C  = H T                                  content matrix, N x N'
    M  = rowsoftmax(LeakyReLU(C a_row 1^T + 1 (D a_col)^T))
    H' = M^T H,   A' = M^T A M
    A~ = rowsoftmax((log(A' + eps) + g) / tau)

``D`` holds one N'-dimensional descriptor per cluster column of ``C``; see
:func:`cluster_descriptors` for the two ways of building it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tn
from .embed import glorot
from .tensor import DiffMatrix

AFFINITY = "affinity-summary"
PAD_TRUNCATE = "pad-truncate"
COLUMN_MODES = (AFFINITY, PAD_TRUNCATE)
LOG_EPS = 1e-12


class CoarseningLayer:
    def __init__(self, in_dim: int, n_clusters: int, rng: np.random.Generator,
                 tau: float = 0.1, column_mode: str = AFFINITY):
        if n_clusters < 1:
            raise ValueError("n_clusters must be >= 1")
        if tau <= 0:
            raise ValueError("tau must be positive")
        if column_mode not in COLUMN_MODES:
            raise ValueError(f"column_mode must be one of {COLUMN_MODES}, got {column_mode!r}")
        self.n_clusters = n_clusters
        self.tau = float(tau)
        self.column_mode = column_mode
        self.T = tn.param(glorot(rng, in_dim, n_clusters), name="T")
        self.a_row = tn.param(glorot(rng, 2 * n_clusters, 1, shape=(n_clusters, 1)), name="a_row")
        self.a_col = tn.param(glorot(rng, 2 * n_clusters, 1, shape=(n_clusters, 1)), name="a_col")

    def parameters(self) -> dict[str, DiffMatrix]:
        return {"T": self.T, "a_row": self.a_row, "a_col": self.a_col}

    def __call__(self, H, A, rng=None, training=False) -> "CoarsenOutput":
        return coarsen_forward(self, H, A, rng=rng, training=training)


@dataclass
class AssignmentMatrix:
    M: DiffMatrix
    C: DiffMatrix


@dataclass
class CoarsenOutput:
    H: DiffMatrix
    A: DiffMatrix
    A_sampled: DiffMatrix
    assignment: AssignmentMatrix


def build_gcont(H, T) -> DiffMatrix:
    return tn.matmul(H, T)


def _truncation(n: int, n_clusters: int) -> np.ndarray:
    """N' x N selector keeping the first min(N, N') rows (zero rows pad)."""
    s = np.zeros((n_clusters, n))
    k = min(n, n_clusters)
    s[np.arange(k), np.arange(k)] = 1.0
    return s


def cluster_descriptors(C, column_mode: str = AFFINITY) -> DiffMatrix:
    """N' x N' matrix whose row j describes cluster j.

    affinity-summary: row j = (1/N) sum_i C_ij C_(i,.), i.e. C^T C / N.
    pad-truncate: row j = column j of C zero-padded or truncated to N'.
    """
    C = tn.as_matrix(C)
    n, n_clusters = C.shape
    if column_mode == AFFINITY:
        return tn.scale(C.T @ C, 1.0 / n)
    if column_mode == PAD_TRUNCATE:
        return (tn.const(_truncation(n, n_clusters)) @ C).T
    raise ValueError(f"unknown column mode {column_mode!r}")


def cluster_descriptor(C, j: int, column_mode: str = AFFINITY) -> np.ndarray:
    C = tn.as_matrix(C)
    if not 0 <= j < C.cols:
        raise IndexError(f"cluster index {j} out of range 0..{C.cols - 1}")
    with tn.no_grad():
        return cluster_descriptors(C, column_mode).value[j].copy()


def moa_scores(C, a_row, a_col, column_mode: str = AFFINITY) -> DiffMatrix:
    """Raw assignment logits M_ij = LeakyReLU(a_row . C_i + a_col . D_j)."""
    C = tn.as_matrix(C)
    n, n_clusters = C.shape
    D = cluster_descriptors(C, column_mode)
    node_term = C @ a_row                  # N x 1
    cluster_term = (D @ a_col).T           # 1 x N'
    return tn.leaky_relu(node_term @ tn.ones(1, n_clusters) + tn.ones(n, 1) @ cluster_term)


def normalize_assignment(raw, C=None) -> AssignmentMatrix:
    raw = tn.as_matrix(raw)
    return AssignmentMatrix(M=tn.row_softmax(raw), C=C if C is not None else raw)


def form_clusters(M, H, A) -> tuple[DiffMatrix, DiffMatrix]:
    M, H, A = tn.as_matrix(M), tn.as_matrix(H), tn.as_matrix(A)
    if M.rows != H.rows or A.shape != (M.rows, M.rows):
        raise tn.ShapeError(f"form_clusters: M {M.shape}, H {H.shape}, A {A.shape} do not conform")
    Mt = M.T
    return Mt @ H, Mt @ (A @ M)


def gumbel_noise(shape, rng: np.random.Generator) -> np.ndarray:
    u = rng.random(shape)
    u = np.clip(u, np.finfo(float).tiny, 1.0 - np.finfo(float).eps)
    return -np.log(-np.log(u))


def soft_sample(A_coarse, tau: float, rng: np.random.Generator | None = None,
                training: bool = False) -> DiffMatrix:
    """Row-wise Gumbel-Softmax over log(A' + eps); noise only when training."""
    A_coarse = tn.as_matrix(A_coarse)
    if (A_coarse.value < 0).any():
        raise tn.DomainError("soft_sample: coarsened adjacency has negative entries")
    logits = tn.log(A_coarse + tn.DiffMatrix._wrap(np.full(A_coarse.shape, LOG_EPS)))
    if training:
        if rng is None:
            raise ValueError("soft_sample needs an rng when training")
        logits = logits + tn.const(gumbel_noise(A_coarse.shape, rng))
    return tn.row_softmax(tn.scale(logits, 1.0 / tau))


def coarsen_forward(layer: CoarseningLayer, H, A, rng=None, training: bool = False) -> CoarsenOutput:
    H, A = tn.as_matrix(H), tn.as_matrix(A)
    C = build_gcont(H, layer.T)
    raw = moa_scores(C, layer.a_row, layer.a_col, layer.column_mode)
    assignment = normalize_assignment(raw, C)
    H_c, A_c = form_clusters(assignment.M, H, A)
    A_s = soft_sample(A_c, layer.tau, rng=rng, training=training)
    return CoarsenOutput(H=H_c, A=A_c, A_sampled=A_s, assignment=assignment)


def relaxed_scores(C: np.ndarray, a_row: np.ndarray, a_col: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Pre-activation scores for N < N', computed two ways with scalar accumulation.

    ``padded``: a_col (length N') against column j zero-padded to N'.
    ``extended``: the length-N column against a_col[:N], the remaining
    parameter entries meeting the padding zeros afterwards.
    Both walk the terms in the same order, so they agree bitwise.
    """
    C = np.asarray(C, dtype=np.float64)
    a_row = np.ravel(a_row)
    a_col = np.ravel(a_col)
    n, n_clusters = C.shape
    if n >= n_clusters:
        raise ValueError("relaxed_scores compares padding only for N < N'")
    padded = np.empty((n, n_clusters))
    extended = np.empty((n, n_clusters))
    for i in range(n):
        row_part = 0.0
        for k in range(n_clusters):
            row_part += a_row[k] * C[i, k]
        for j in range(n_clusters):
            col = np.concatenate([C[:, j], np.zeros(n_clusters - n)])
            acc = row_part
            for k in range(n_clusters):
                acc += a_col[k] * col[k]
            padded[i, j] = acc
            acc = row_part
            for k in range(n):
                acc += a_col[k] * C[k, j]
            for k in range(n, n_clusters):
                acc += a_col[k] * 0.0
            extended[i, j] = acc
    return padded, extended


def baseline_pool(kind: str, H) -> DiffMatrix:
    """Flat readouts used for ablations: ``sum``, ``mean`` or ``mean-attention``."""
    H = tn.as_matrix(H)
    if kind == "sum":
        return tn.col_sum(H)
    if kind == "mean":
        return tn.col_mean(H)
    if kind in ("mean-attention", "mean-att"):
        context = tn.col_mean(H)                       # 1 x F
        weights = tn.sigmoid(H @ context.T)            # N x 1
        return weights.T @ H
    raise ValueError(f"unknown pool kind {kind!r}")
