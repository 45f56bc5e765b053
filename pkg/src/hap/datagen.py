"""Ground truth and synthetic data: exact GED, triplets, matching pairs."""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .graph import Graph, er_random_graph
from .heads import TripletRecord

GED_NODE_CAP = 10


class GedCapError(ValueError):
    pass


@dataclass(frozen=True)
class EditCostModel:
    node_insert: float = 1.0
    node_delete: float = 1.0
    node_relabel: float = 1.0
    edge_insert: float = 1.0
    edge_delete: float = 1.0

    def __post_init__(self):
        if min(self.node_insert, self.node_delete, self.node_relabel, self.edge_insert, self.edge_delete) < 0:
            raise ValueError("edit costs must be nonnegative")


@dataclass(frozen=True)
class PairRecord:
    g1: int
    g2: int
    label: Optional[int] = None
    ged: Optional[float] = None

    def __post_init__(self):
        if (self.label is None) == (self.ged is None):
            raise ValueError("a pair carries exactly one of label or ged")


@dataclass
class GedResult:
    cost: float
    mapping: list  # mapping[u] = v in g2, or None for deletion
    operations: list

    def __float__(self):
        return float(self.cost)


def _edges_upper(adj: np.ndarray) -> np.ndarray:
    return np.triu(adj > 0, 1)


def ged_exact(g1: Graph, g2: Graph, costs: EditCostModel = EditCostModel(),
              return_path: bool = False):
    """Exact graph edit distance by depth-first branch and bound.

    Nodes of ``g1`` are assigned in order of decreasing degree to a free
    node of ``g2`` or to deletion; unused ``g2`` nodes are inserted at the
    end. The lower bound used for pruning counts the unavoidable node
    insertions/deletions and the difference in still-open edges.
    """
    for g in (g1, g2):
        if g.n > GED_NODE_CAP:
            raise GedCapError(f"exact GED is capped at {GED_NODE_CAP} nodes; got a graph with {g.n}")
    a1 = g1.adjacency > 0
    a2 = g2.adjacency > 0
    n1, n2 = g1.n, g2.n
    lab1 = g1.node_labels
    lab2 = g2.node_labels
    labelled = lab1 is not None and lab2 is not None
    order = sorted(range(n1), key=lambda u: (-int(a1[u].sum()), u))
    pos = {u: k for k, u in enumerate(order)}

    # edges of g1 whose later endpoint (in assignment order) is order[k]
    closing = [[] for _ in range(n1)]
    for u, v in zip(*np.nonzero(_edges_upper(a1))):
        k = max(pos[u], pos[v])
        closing[k].append(int(v) if pos[u] == k else int(u))
    # g1 edges still open once the first k nodes are assigned
    open1 = [0] * (n1 + 1)
    total1 = int(_edges_upper(a1).sum())
    done = 0
    for k in range(n1):
        open1[k] = total1 - done
        done += len(closing[k])
    open1[n1] = 0

    deg1 = a1.sum(axis=1).astype(int).tolist()
    deg2 = a2.sum(axis=1).astype(int).tolist()
    a1l = a1.tolist()
    a2l = a2.tolist()
    nbrs2 = [np.nonzero(a2[v])[0].tolist() for v in range(n2)]
    total2 = int(_edges_upper(a2).sum())
    c = costs
    best = [np.inf, None]
    mapping = [None] * n1
    used = [False] * n2
    n_used = [0]

    def node_cost(u, v):
        if v is None:
            return c.node_delete
        if labelled and lab1[u] != lab2[v]:
            return c.node_relabel
        return 0.0

    def tail_cost():
        # insert every unused g2 node and all g2 edges touching one
        free = [v for v in range(n2) if not used[v]]
        cost = c.node_insert * len(free)
        fset = set(free)
        e = 0
        for v in free:
            for w in nbrs2[v]:
                if w not in fset or w > v:
                    e += 1
        return cost + c.edge_insert * e

    def lower_bound(k, closed2):
        r1 = n1 - k
        r2 = n2 - n_used[0]
        lb = (c.node_delete * (r1 - r2) if r1 > r2 else c.node_insert * (r2 - r1))
        open2 = total2 - closed2
        diff = open1[k] - open2
        lb += c.edge_delete * diff if diff > 0 else c.edge_insert * (-diff)
        return lb

    def search(k, cost, closed2):
        if cost + lower_bound(k, closed2) >= best[0]:
            return
        if k == n1:
            total = cost + tail_cost()
            if total < best[0]:
                best[0] = total
                best[1] = list(mapping)
            return
        u = order[k]
        candidates = [v for v in range(n2) if not used[v]]
        # try structurally similar targets first
        candidates.sort(key=lambda v: (abs(deg2[v] - deg1[u]), v))
        for v in candidates + [None]:
            step = node_cost(u, v)
            newly_closed = 0
            for w in closing[k]:
                mw = mapping[w]
                has2 = v is not None and mw is not None and a2l[v][mw]
                if has2:
                    newly_closed += 1
                else:
                    step += c.edge_delete
            if v is not None:
                # g2 edges between v and already-placed nodes with no g1 counterpart
                for w_k in range(k):
                    w = order[w_k]
                    mw = mapping[w]
                    if mw is not None and a2l[v][mw] and not a1l[u][w]:
                        step += c.edge_insert
                        newly_closed += 1
            mapping[u] = v
            if v is not None:
                used[v] = True
                n_used[0] += 1
            search(k + 1, cost + step, closed2 + newly_closed)
            mapping[u] = None
            if v is not None:
                used[v] = False
                n_used[0] -= 1

    search(0, 0.0, 0)
    cost = float(best[0])
    if not return_path:
        return cost
    return GedResult(cost, best[1], edit_operations(g1, g2, best[1]))


def edit_operations(g1: Graph, g2: Graph, mapping: Sequence) -> list:
    """Human-readable edit script (1-based node ids) realising ``mapping``."""
    a1 = g1.adjacency > 0
    a2 = g2.adjacency > 0
    ops = []
    labelled = g1.node_labels is not None and g2.node_labels is not None
    for u, v in enumerate(mapping):
        if v is None:
            ops.append(("delete node", u + 1))
        elif labelled and g1.node_labels[u] != g2.node_labels[v]:
            ops.append(("relabel node", u + 1, int(g2.node_labels[v])))
    for u in range(g1.n):
        for w in range(u + 1, g1.n):
            if not a1[u, w]:
                continue
            mu, mw = mapping[u], mapping[w]
            if mu is None or mw is None or not a2[mu, mw]:
                ops.append(("delete edge", u + 1, w + 1))
    inverse = {v: u for u, v in enumerate(mapping) if v is not None}
    inserted = [v for v in range(g2.n) if v not in inverse]
    for v in inserted:
        ops.append(("insert node", f"g2:{v + 1}"))
    for v in range(g2.n):
        for x in range(v + 1, g2.n):
            if not a2[v, x]:
                continue
            if v in inverse and x in inverse and a1[inverse[v], inverse[x]]:
                continue
            ops.append(("insert edge", f"g2:{v + 1}", f"g2:{x + 1}"))
    return ops


def ged_table(graphs: Sequence[Graph], costs: EditCostModel = EditCostModel()) -> np.ndarray:
    """Symmetric all-pairs exact GED table with zero diagonal."""
    n = len(graphs)
    table = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            table[i, j] = table[j, i] = ged_exact(graphs[i], graphs[j], costs)
    return table


def make_pair_ground_truth(dataset, costs: EditCostModel = EditCostModel()) -> np.ndarray:
    graphs = dataset.graphs if hasattr(dataset, "graphs") else list(dataset)
    return ged_table(graphs, costs)


def make_triplets(n_graphs: int, table: np.ndarray, count: int, rng: np.random.Generator) -> list[TripletRecord]:
    """Anchor i uniform, distinct j != k uniform; r = g_ij - g_ik."""
    if n_graphs < 3:
        raise ValueError("need at least 3 graphs to form triplets")
    out = []
    for _ in range(count):
        i = int(rng.integers(n_graphs))
        j, k = (int(x) for x in rng.choice(n_graphs, size=2, replace=False))
        out.append(TripletRecord(i, j, k, float(table[i, j] - table[i, k])))
    return out


def random_small_graphs(count: int, max_nodes: int, rng: np.random.Generator,
                        min_nodes: int = 3, p_range=(0.2, 0.5)) -> list[Graph]:
    graphs = []
    for gid in range(count):
        n = int(rng.integers(min_nodes, max_nodes + 1))
        p = float(rng.uniform(*p_range))
        graphs.append(er_random_graph(n, p, rng, id=gid))
    return graphs


def largest_component(g: Graph) -> Graph:
    n = g.n
    seen = np.full(n, -1)
    comp = 0
    for s in range(n):
        if seen[s] >= 0:
            continue
        stack = [s]
        seen[s] = comp
        while stack:
            u = stack.pop()
            for v in np.nonzero(g.adjacency[u])[0]:
                if seen[v] < 0:
                    seen[v] = comp
                    stack.append(v)
        comp += 1
    sizes = np.bincount(seen)
    keep = np.nonzero(seen == int(np.argmax(sizes)))[0]
    return Graph(g.adjacency[np.ix_(keep, keep)], g.features[keep], label=g.label, id=g.id)


def _delete_nodes(g: Graph, k: int, rng) -> Graph:
    drop = set(rng.choice(g.n, size=k, replace=False).tolist())
    keep = np.array([i for i in range(g.n) if i not in drop])
    return Graph(g.adjacency[np.ix_(keep, keep)], g.features[keep], id=g.id)


def _add_nodes(g: Graph, k: int, p: float, rng) -> Graph:
    n = g.n + k
    a = np.zeros((n, n))
    a[: g.n, : g.n] = g.adjacency
    for new in range(g.n, n):
        links = rng.random(new) < p
        a[new, :new] = links
        a[:new, new] = links
    return Graph(a, np.ones((n, 1)), id=g.id)


def gen_matching_dataset(n_base: int, base_size: int, rng: np.random.Generator,
                         p_range=(0.2, 0.5)) -> tuple[list[Graph], list[PairRecord]]:
    """Labelled graph pairs: one positive and one negative per base graph.

    Positive partner: base with 1-3 random nodes removed, reduced to its
    largest connected component. Negative partner: base with 3-7 new nodes,
    each wired to every earlier node with the base edge probability.
    Returns the graph list (base, positive, negative per base) and pairs
    referencing it by 0-based index.
    """
    if base_size < 5:
        raise ValueError("base_size must be at least 5")
    graphs: list[Graph] = []
    pairs: list[PairRecord] = []
    for _ in range(n_base):
        p = float(rng.uniform(*p_range))
        base = er_random_graph(base_size, p, rng)
        positive = largest_component(_delete_nodes(base, int(rng.integers(1, 4)), rng))
        while positive.n < 2:
            base = er_random_graph(base_size, p, rng)
            positive = largest_component(_delete_nodes(base, int(rng.integers(1, 4)), rng))
        negative = _add_nodes(base, int(rng.integers(3, 8)), p, rng)
        b = len(graphs)
        for offset, g in enumerate((base, positive, negative)):
            graphs.append(Graph(g.adjacency, np.ones((g.n, 1)), label=0, id=b + offset))
        pairs.append(PairRecord(b, b + 1, label=1))
        pairs.append(PairRecord(b, b + 2, label=0))
    return graphs, pairs


# ---------------------------------------------------------------------------
# sidecar record files: tab-separated, 1-based graph ids


def write_pairs(pairs: Sequence[PairRecord], path: str) -> None:
    with open(path, "w") as fh:
        for rec in pairs:
            value = rec.label if rec.label is not None else _fmt(rec.ged)
            fh.write(f"{rec.g1 + 1}\t{rec.g2 + 1}\t{value}\n")


def read_pairs(path: str, kind: str = "label") -> list[PairRecord]:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValueError(f"{path}:{lineno}: expected 3 tab-separated fields")
            i, j = int(parts[0]) - 1, int(parts[1]) - 1
            if kind == "label":
                out.append(PairRecord(i, j, label=int(parts[2])))
            else:
                out.append(PairRecord(i, j, ged=float(parts[2])))
    return out


def write_triplets(triplets: Sequence[TripletRecord], path: str) -> None:
    with open(path, "w") as fh:
        for t in triplets:
            fh.write(f"{t.g1 + 1}\t{t.g2 + 1}\t{t.g3 + 1}\t{_fmt(t.r)}\n")


def read_triplets(path: str) -> list[TripletRecord]:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise ValueError(f"{path}:{lineno}: expected 4 tab-separated fields")
            out.append(TripletRecord(int(parts[0]) - 1, int(parts[1]) - 1, int(parts[2]) - 1, float(parts[3])))
    return out


def _fmt(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def pairs_path(directory: str, name: str) -> str:
    return os.path.join(directory, f"{name}_pairs.txt")


def triplets_path(directory: str, name: str) -> str:
    return os.path.join(directory, f"{name}_triplets.txt")


def toy_classification_graphs(n_graphs: int, n_nodes: int, rng: np.random.Generator,
                              probs=(0.2, 0.5)) -> list[Graph]:
    """Balanced ER graphs labelled by which edge probability generated them."""
    graphs = []
    for gid in range(n_graphs):
        label = gid % len(probs)
        g = er_random_graph(n_nodes, probs[label], rng, id=gid)
        graphs.append(Graph(g.adjacency, g.features, label=label, id=gid))
    return graphs

