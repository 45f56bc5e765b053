"""Graph container, feature initialisation, TU-format IO and random graphs."""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np


class GraphFormatError(ValueError):
    """Malformed or missing dataset file."""


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected graph with a dense (possibly weighted) adjacency matrix.

    ``node_labels`` holds raw integer node labels when the source data has
    them; they drive feature encoding and edit-distance relabel costs.
    """

    adjacency: np.ndarray
    features: np.ndarray
    label: Optional[int] = None
    id: int = 0
    node_labels: Optional[np.ndarray] = None

    def __post_init__(self):
        a = np.asarray(self.adjacency, dtype=np.float64)
        x = np.asarray(self.features, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"adjacency must be square, got {a.shape}")
        if x.ndim != 2 or x.shape[0] != a.shape[0]:
            raise ValueError(f"features need {a.shape[0]} rows, got {x.shape}")
        object.__setattr__(self, "adjacency", a)
        object.__setattr__(self, "features", x)
        if self.node_labels is not None:
            object.__setattr__(self, "node_labels", np.asarray(self.node_labels, dtype=np.int64))

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    @property
    def num_edges(self) -> int:
        return int(np.count_nonzero(np.triu(self.adjacency, 1)))

    def degrees(self) -> np.ndarray:
        return np.count_nonzero(self.adjacency, axis=1)

    def degree_matrix(self) -> np.ndarray:
        return np.diag(self.adjacency.sum(axis=1))


def from_edges(n: int, edges, label=None, id=0, node_labels=None) -> Graph:
    """Build a 0/1 graph from 0-based edge pairs; features default to a constant column."""
    a = np.zeros((n, n))
    for u, v in edges:
        if u != v:
            a[u, v] = a[v, u] = 1.0
    return Graph(a, np.ones((n, 1)), label=label, id=id, node_labels=node_labels)


@dataclass
class GraphDataset:
    graphs: list[Graph]
    num_classes: int = 0
    split: dict = field(default_factory=dict)

    @property
    def feature_dim(self) -> int:
        return self.graphs[0].features.shape[1] if self.graphs else 0

    def __len__(self):
        return len(self.graphs)

    def __getitem__(self, i) -> Graph:
        return self.graphs[i]

    def max_degree(self) -> int:
        return max((int(g.degrees().max(initial=0)) for g in self.graphs), default=0)


def degree_onehot(g: Graph, max_degree: int) -> Graph:
    """Replace features with a one-hot encoding of node degree, clamped at ``max_degree``."""
    deg = np.minimum(g.degrees(), max_degree)
    x = np.zeros((g.n, max_degree + 1))
    x[np.arange(g.n), deg] = 1.0
    return replace(g, features=x)


def label_onehot(g: Graph, num_labels: int) -> Graph:
    x = np.zeros((g.n, num_labels))
    x[np.arange(g.n), g.node_labels] = 1.0
    return replace(g, features=x)


def encode_features(graphs: Sequence[Graph], max_degree: int | None = None) -> list[Graph]:
    """One-hot node labels when every graph has them, else degree one-hot."""
    graphs = list(graphs)
    if graphs and all(g.node_labels is not None for g in graphs):
        width = max(int(g.node_labels.max(initial=0)) for g in graphs) + 1
        return [label_onehot(g, width) for g in graphs]
    if max_degree is None:
        max_degree = max((int(g.degrees().max(initial=0)) for g in graphs), default=0)
    return [degree_onehot(g, max_degree) for g in graphs]


def er_random_graph(n: int, p: float, rng: np.random.Generator, id: int = 0) -> Graph:
    """Erdos-Renyi G(n, p) with a constant feature column."""
    if n < 1:
        raise ValueError("n must be at least 1")
    iu = np.triu_indices(n, 1)
    upper = rng.random(len(iu[0])) < p
    a = np.zeros((n, n))
    a[iu] = upper
    a = a + a.T
    return Graph(a, np.ones((n, 1)), id=id)


def permute_graph(g: Graph, perm: Sequence[int]) -> Graph:
    """Relabel nodes so that new node ``i`` is old node ``perm[i]``.

    With permutation matrix P (P[i, perm[i]] = 1) this is A -> P A P^T,
    X -> P X.
    """
    perm = np.asarray(perm)
    if perm.shape != (g.n,) or not np.array_equal(np.sort(perm), np.arange(g.n)):
        raise ValueError(f"not a permutation of 0..{g.n - 1}: {perm.tolist()}")
    labels = None if g.node_labels is None else g.node_labels[perm]
    return replace(
        g,
        adjacency=g.adjacency[np.ix_(perm, perm)],
        features=g.features[perm],
        node_labels=labels,
    )


def split_indices(n: int, ratios=(0.8, 0.1, 0.1), rng: np.random.Generator | None = None) -> dict:
    """Random disjoint train/val/test index lists covering range(n)."""
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) < 0:
        raise ValueError(f"split ratios must be three nonnegative numbers summing to 1, got {ratios}")
    rng = rng if rng is not None else np.random.default_rng(0)
    order = rng.permutation(n)
    n_train = int(round(ratios[0] * n))
    n_val = int(round(ratios[1] * n))
    return {
        "train": sorted(order[:n_train].tolist()),
        "val": sorted(order[n_train:n_train + n_val].tolist()),
        "test": sorted(order[n_train + n_val:].tolist()),
    }


# ---------------------------------------------------------------------------
# TU text format


def _read_lines(path: str) -> list[str]:
    with open(path) as fh:
        return [ln.strip() for ln in fh if ln.strip()]


def find_dataset_name(directory: str) -> str:
    """Infer NAME from the single ``NAME_graph_indicator.txt`` in ``directory``."""
    suffix = "_graph_indicator.txt"
    names = sorted(f[: -len(suffix)] for f in os.listdir(directory) if f.endswith(suffix))
    if not names:
        raise GraphFormatError(f"no *{suffix} file in {directory}")
    if len(names) > 1:
        raise GraphFormatError(f"several datasets in {directory}: {names}; pass a name")
    return names[0]


def load_tu_dataset(directory: str, name: str | None = None, encode: bool = True) -> GraphDataset:
    """Load a TU-style multi-file dataset.

    Mandatory files are ``NAME_A.txt``, ``NAME_graph_indicator.txt`` and
    ``NAME_graph_labels.txt``; ``NAME_node_labels.txt`` is optional. Graph
    labels are remapped to 0..C-1 in sorted order.
    """
    name = name or find_dataset_name(directory)

    def path(suffix):
        return os.path.join(directory, f"{name}_{suffix}.txt")

    for suffix in ("A", "graph_indicator", "graph_labels"):
        if not os.path.exists(path(suffix)):
            raise GraphFormatError(f"missing mandatory file {path(suffix)}")

    try:
        indicator = np.array([int(x) for x in _read_lines(path("graph_indicator"))], dtype=np.int64)
        raw_labels = [int(float(x)) for x in _read_lines(path("graph_labels"))]
    except ValueError as exc:
        raise GraphFormatError(f"non-integer entry in {name} indicator/labels: {exc}") from None
    n_graphs = len(raw_labels)
    if indicator.size and (indicator.min() < 1 or indicator.max() > n_graphs):
        raise GraphFormatError(f"graph indicator references graphs outside 1..{n_graphs}")

    node_labels = None
    if os.path.exists(path("node_labels")):
        node_labels = np.array([int(x.split(",")[0]) for x in _read_lines(path("node_labels"))])
        if node_labels.size != indicator.size:
            raise GraphFormatError(
                f"{path('node_labels')} has {node_labels.size} lines, expected {indicator.size}")
        node_labels = node_labels - node_labels.min()

    # node k (0-based global) belongs to graph indicator[k]; local index by offset
    counts = np.bincount(indicator, minlength=n_graphs + 1)[1:]
    offsets = np.concatenate([[0], np.cumsum(counts)])
    if not np.all(np.diff(indicator) >= 0):
        raise GraphFormatError("graph indicator must list nodes grouped by graph in order")

    adjs = [np.zeros((c, c)) for c in counts]
    with open(path("A")) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                u, v = (int(t) - 1 for t in line.split(","))
            except ValueError:
                raise GraphFormatError(f"{path('A')}:{lineno}: expected 'u, v', got {line!r}") from None
            if not (0 <= u < indicator.size and 0 <= v < indicator.size):
                raise GraphFormatError(f"{path('A')}:{lineno}: node id out of range")
            gu, gv = indicator[u] - 1, indicator[v] - 1
            if gu != gv:
                raise GraphFormatError(f"{path('A')}:{lineno}: edge joins nodes of graphs {gu + 1} and {gv + 1}")
            lu, lv = u - offsets[gu], v - offsets[gu]
            if lu != lv:
                adjs[gu][lu, lv] = adjs[gu][lv, lu] = 1.0

    classes = sorted(set(raw_labels))
    remap = {c: i for i, c in enumerate(classes)}
    graphs = []
    for gi in range(n_graphs):
        nl = None if node_labels is None else node_labels[offsets[gi]:offsets[gi + 1]]
        graphs.append(Graph(adjs[gi], np.ones((counts[gi], 1)), label=remap[raw_labels[gi]], id=gi, node_labels=nl))
    if encode:
        graphs = encode_features(graphs)
    return GraphDataset(graphs, num_classes=len(classes))


def write_tu_dataset(dataset, directory: str, name: str) -> None:
    """Write graphs in the TU text format (both edge directions, 1-based ids)."""
    graphs = dataset.graphs if isinstance(dataset, GraphDataset) else list(dataset)
    os.makedirs(directory, exist_ok=True)
    edge_lines, ind_lines, label_lines, node_label_lines = [], [], [], []
    offset = 0
    with_node_labels = bool(graphs) and all(g.node_labels is not None for g in graphs)
    for gi, g in enumerate(graphs, 1):
        rows, cols = np.nonzero(g.adjacency)
        for u, v in zip(rows.tolist(), cols.tolist()):
            edge_lines.append(f"{u + 1 + offset}, {v + 1 + offset}")
        ind_lines.extend([str(gi)] * g.n)
        label_lines.append(str(0 if g.label is None else g.label))
        if with_node_labels:
            node_label_lines.extend(str(int(x)) for x in g.node_labels)
        offset += g.n

    def dump(suffix, lines):
        with open(os.path.join(directory, f"{name}_{suffix}.txt"), "w") as fh:
            fh.write("\n".join(lines) + ("\n" if lines else ""))

    dump("A", edge_lines)
    dump("graph_indicator", ind_lines)
    dump("graph_labels", label_lines)
    if with_node_labels:
        dump("node_labels", node_label_lines)


def read_edge_list(path: str) -> Graph:
    """Single-graph text file: ``nodes N`` line (optional) then 1-based ``u, v`` edges.

    Lines starting with ``#`` are ignored. Without a ``nodes`` line the node
    count is the largest id seen.
    """
    n = None
    edges = []
    for lineno, line in enumerate(_read_lines(path), 1):
        if line.startswith("#"):
            continue
        if line.lower().startswith("nodes"):
            n = int(line.split()[1])
            continue
        parts = line.replace(",", " ").split()
        if len(parts) != 2:
            raise GraphFormatError(f"{path}:{lineno}: expected two node ids, got {line!r}")
        edges.append((int(parts[0]) - 1, int(parts[1]) - 1))
    seen = max((max(e) for e in edges), default=-1) + 1
    n = seen if n is None else n
    if n < 1 or seen > n or any(min(e) < 0 for e in edges):
        raise GraphFormatError(f"{path}: node ids must lie in 1..{n}")
    return from_edges(n, edges)


def write_edge_list(g: Graph, path: str) -> None:
    with open(path, "w") as fh:
        fh.write(f"nodes {g.n}\n")
        for u, v in zip(*np.nonzero(np.triu(g.adjacency, 1))):
            fh.write(f"{u + 1}, {v + 1}\n")
