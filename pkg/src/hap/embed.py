"""Node & cluster embedding layers (GCN and masked-attention GAT)."""

from __future__ import annotations

import numpy as np

from . import tensor as tn
from .tensor import DiffMatrix


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


def _with_self_loops(A: DiffMatrix) -> DiffMatrix:
    return A + tn.identity(A.rows)


class _Layer:
    """Shared bias handling: an optional zero-initialised row added before the ReLU."""

    def _init_bias(self, out_dim: int, bias: bool):
        self.b = tn.param(np.zeros((1, out_dim)), name="b") if bias else None

    def _activate(self, z: DiffMatrix) -> DiffMatrix:
        if self.b is not None:
            z = tn.add_row(z, self.b)
        return tn.relu(z)


class GcnLayer(_Layer):
    """ReLU(D^-1/2 (A + I) D^-1/2 H W + b) with D the row sums of A + I.

    Without the bias the layer is positively homogeneous in H, and so is the
    whole encoder; ``bias=False`` gives that bias-free form.
    """

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, bias: bool = True):
        self.W = tn.param(glorot(rng, in_dim, out_dim), name="W")
        self._init_bias(out_dim, bias)

    def parameters(self) -> dict[str, DiffMatrix]:
        out = {"W": self.W}
        if self.b is not None:
            out["b"] = self.b
        return out

    def __call__(self, A, H) -> DiffMatrix:
        A, H = tn.as_matrix(A), tn.as_matrix(H)
        a_tilde = _with_self_loops(A)
        # D^-1/2 as exp(-log(d)/2); degrees are >= 1 thanks to the self-loop
        d_inv_sqrt = tn.exp(tn.scale(tn.log(tn.row_sum(a_tilde)), -0.5))
        norm = a_tilde * (d_inv_sqrt @ d_inv_sqrt.T)
        return self._activate(norm @ (H @ self.W))


class GatLayer(_Layer):
    """Single-head graph attention restricted to the self-looped neighbourhood.

    The attention vector over ``[Wh_i || Wh_j]`` is kept as its two halves,
    ``attn_src`` and ``attn_dst``.
    """

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, bias: bool = True):
        self.W = tn.param(glorot(rng, in_dim, out_dim), name="W")
        self.attn_src = tn.param(glorot(rng, 2 * out_dim, 1, shape=(out_dim, 1)), name="attn_src")
        self.attn_dst = tn.param(glorot(rng, 2 * out_dim, 1, shape=(out_dim, 1)), name="attn_dst")
        self._init_bias(out_dim, bias)

    def parameters(self) -> dict[str, DiffMatrix]:
        out = {"W": self.W, "attn_src": self.attn_src, "attn_dst": self.attn_dst}
        if self.b is not None:
            out["b"] = self.b
        return out

    def attention(self, A, H) -> DiffMatrix:
        A, H = tn.as_matrix(A), tn.as_matrix(H)
        n = A.rows
        hw = H @ self.W
        src = hw @ self.attn_src
        dst = hw @ self.attn_dst
        logits = tn.leaky_relu(src @ tn.ones(1, n) + tn.ones(n, 1) @ dst.T)
        mask = (A.value + np.eye(n)) > 0
        return tn.row_softmax(logits, mask=mask)

    def __call__(self, A, H) -> DiffMatrix:
        H = tn.as_matrix(H)
        alpha = self.attention(A, H)
        return self._activate(alpha @ (H @ self.W))


def make_layer(kind: str, in_dim: int, out_dim: int, rng: np.random.Generator, bias: bool = True):
    if kind == "gcn":
        return GcnLayer(in_dim, out_dim, rng, bias=bias)
    if kind == "gat":
        return GatLayer(in_dim, out_dim, rng, bias=bias)
    raise ValueError(f"unknown embedding layer kind {kind!r} (expected 'gcn' or 'gat')")
