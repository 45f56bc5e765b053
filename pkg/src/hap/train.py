"""Adam, per-example training for the three tasks, evaluation, checkpoints."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Optional, Sequence

import numpy as np
from scipy.stats import mannwhitneyu

from . import tensor as tn
from .coarsen import AFFINITY
from .graph import Graph, degree_onehot, label_onehot, split_indices
from .heads import loss_pair, loss_single, loss_triple, similarity_score
from .model import HAPModel, ModelConfig, level_distances

log = logging.getLogger(__name__)

TASKS = ("classify", "match", "similarity")


class NumericError(RuntimeError):
    """Training produced a non-finite loss."""


class TaskMismatchError(ValueError):
    pass


@dataclass
class TrainConfig:
    task: str = "classify"
    lr: float = 0.01
    epochs: int = 100
    batch_size: int = 32
    seed: int = 0
    layer_kind: str = "gcn"
    layers_per_block: int = 2
    clusters: tuple = (16, 1)
    hidden: Optional[int] = None
    tau: float = 0.1
    scale: float = 0.5
    split: tuple = (0.8, 0.1, 0.1)
    column_mode: str = AFFINITY
    pool: str = "hap"
    patience: int = 20
    threads: int = 1
    paper_literal_losses: bool = False
    bias: bool = True

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}, got {self.task!r}")
        self.clusters = tuple(int(c) for c in self.clusters)
        self.split = tuple(float(r) for r in self.split)
        if min(self.epochs, self.batch_size, self.layers_per_block, self.threads) < 1:
            raise ValueError("counts must be >= 1")
        if len(self.split) != 3 or abs(sum(self.split) - 1.0) > 1e-9:
            raise ValueError("split ratios must be three numbers summing to 1")
        if self.lr < 0:
            raise ValueError("learning rate must be nonnegative")
        if self.hidden is None:
            self.hidden = 64 if self.task == "classify" else 128

    def to_dict(self) -> dict:
        d = asdict(self)
        d["clusters"] = list(self.clusters)
        d["split"] = list(self.split)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})

    def fingerprint(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# data


def feature_encoding(graphs: Sequence[Graph]) -> dict:
    if graphs and all(g.node_labels is not None for g in graphs):
        return {"kind": "node-label", "width": max(int(g.node_labels.max(initial=0)) for g in graphs) + 1}
    return {"kind": "degree", "max_degree": max((int(g.degrees().max(initial=0)) for g in graphs), default=0)}


def apply_encoding(graphs: Sequence[Graph], encoding: dict) -> list[Graph]:
    if encoding["kind"] == "node-label":
        width = encoding["width"]
        return [label_onehot(Graph(g.adjacency, g.features, g.label, g.id,
                                   np.minimum(g.node_labels, width - 1)), width) for g in graphs]
    return [degree_onehot(g, encoding["max_degree"]) for g in graphs]


def encoding_width(encoding: dict) -> int:
    return encoding["width"] if encoding["kind"] == "node-label" else encoding["max_degree"] + 1


@dataclass
class TaskData:
    """Graphs plus the records a task trains on.

    ``records`` is None for classification (the graphs are the examples),
    a list of PairRecord for matching, a list of TripletRecord for
    similarity. ``split`` indexes examples.
    """

    task: str
    graphs: list
    records: Optional[list] = None
    split: dict = field(default_factory=dict)
    num_classes: int = 0
    encoding: Optional[dict] = None

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        if self.task == "classify":
            if self.records is not None:
                raise TaskMismatchError("classification data must not carry pair/triplet records")
            if any(g.label is None for g in self.graphs):
                raise TaskMismatchError("classification needs a label on every graph")
            if not self.num_classes:
                self.num_classes = max(g.label for g in self.graphs) + 1
        elif self.task == "match":
            if not self.records or any(getattr(r, "label", None) is None for r in self.records):
                raise TaskMismatchError("matching needs labelled pair records")
        else:
            if not self.records or any(not hasattr(r, "r") for r in self.records):
                raise TaskMismatchError("similarity needs triplet records")
        if self.encoding is None:
            self.encoding = feature_encoding(self.graphs)
        self.graphs = apply_encoding(self.graphs, self.encoding)

    @property
    def n_examples(self) -> int:
        return len(self.graphs) if self.records is None else len(self.records)

    def ensure_split(self, ratios, seed: int) -> dict:
        if not self.split:
            self.split = split_indices(self.n_examples, ratios, np.random.default_rng([seed, 8, 1, 1]))
        return self.split


# ---------------------------------------------------------------------------
# optimiser


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict, grads: dict, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    """Bias-corrected Adam update applied in place to ``params`` (name -> DiffMatrix)."""
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros(p.shape)
        g = np.asarray(g, dtype=np.float64)
        if g.shape != p.shape:
            raise tn.ShapeError(f"adam_step: gradient for {name} has shape {g.shape}, parameter {p.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        m = beta1 * (m if m is not None else 0.0) + (1.0 - beta1) * g
        v = beta2 * (v if v is not None else 0.0) + (1.0 - beta2) * g * g
        state.m[name] = m
        state.v[name] = v
        p.value -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return state


# ---------------------------------------------------------------------------
# losses per example


def build_model(config: TrainConfig, data: TaskData) -> HAPModel:
    mc = ModelConfig(
        in_dim=encoding_width(data.encoding),
        hidden=config.hidden,
        layer_kind=config.layer_kind,
        layers_per_block=config.layers_per_block,
        clusters=config.clusters,
        tau=config.tau,
        column_mode=config.column_mode,
        pool=config.pool,
        n_classes=data.num_classes if config.task == "classify" else 0,
        seed=config.seed,
        bias=config.bias,
    )
    return HAPModel(mc)


def example_loss(model: HAPModel, config: TrainConfig, data: TaskData, idx: int,
                 rng=None, training: bool = False) -> tn.DiffMatrix:
    g = data.graphs
    if config.task == "classify":
        enc = model.encode_graph(g[idx], rng=rng, training=training)
        return loss_single([model.predict_proba(enc)], [g[idx].label])
    rec = data.records[idx]
    if config.task == "match":
        e1 = model.encode_graph(g[rec.g1], rng=rng, training=training)
        e2 = model.encode_graph(g[rec.g2], rng=rng, training=training)
        return loss_pair(level_distances(e1, e2), rec.label, config.scale, config.paper_literal_losses)
    e1 = model.encode_graph(g[rec.g1], rng=rng, training=training)
    e2 = model.encode_graph(g[rec.g2], rng=rng, training=training)
    e3 = model.encode_graph(g[rec.g3], rng=rng, training=training)
    return loss_triple(level_distances(e1, e2), level_distances(e1, e3), rec.r, config.paper_literal_losses)


def _example_grad(model, config, data, idx, epoch, names):
    rng = np.random.default_rng([config.seed, epoch, idx])
    try:
        with tn.Tape():
            loss = example_loss(model, config, data, idx, rng=rng, training=True)
    except tn.DomainError as exc:
        # only reachable once NaN/Inf has crept into the parameters
        raise NumericError(f"non-finite values at epoch {epoch}, example {idx}: {exc}") from exc
    value = loss.item()
    grads = tn.backward(loss)
    by_name = {name: grads[p].value for name, p in names.items() if p in grads}
    return value, by_name


# ---------------------------------------------------------------------------
# evaluation


def roc_auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    pos, neg = scores[labels == 1], scores[labels == 0]
    if not len(pos) or not len(neg):
        return float("nan")
    return float(mannwhitneyu(pos, neg).statistic / (len(pos) * len(neg)))


def evaluate(model: HAPModel, data: TaskData, indices: Optional[Sequence[int]] = None,
             scale: float = 0.5) -> dict:
    """Task metrics on ``indices`` (default: all examples); noise off, no recording."""
    if indices is None:
        indices = range(data.n_examples)
    indices = list(indices)
    g = data.graphs
    cache = {}

    def enc(i):
        if i not in cache:
            cache[i] = model.encode_graph(g[i])
        return cache[i]

    with tn.no_grad():
        if data.task == "classify":
            correct = 0
            for i in indices:
                probs = model.predict_proba(enc(i)).value[0]
                correct += int(np.argmax(probs) == g[i].label)
            return {"accuracy": correct / max(1, len(indices))}
        if data.task == "match":
            scores, labels = [], []
            for i in indices:
                rec = data.records[i]
                d = level_distances(enc(rec.g1), enc(rec.g2))[-1].item()
                scores.append(similarity_score(d, scale))
                labels.append(rec.label)
            pred = (np.asarray(scores) >= 0.5).astype(int)
            acc = float(np.mean(pred == np.asarray(labels))) if labels else 0.0
            return {"accuracy": acc, "auc": roc_auc(scores, labels)}
        agree = total = 0
        for i in indices:
            rec = data.records[i]
            if rec.r == 0:
                continue
            d12 = level_distances(enc(rec.g1), enc(rec.g2))
            d13 = level_distances(enc(rec.g1), enc(rec.g3))
            pred = np.mean([a.item() - b.item() for a, b in zip(d12, d13)])
            agree += int(np.sign(pred) == np.sign(rec.r))
            total += 1
        return {"accuracy": agree / total if total else 0.0}


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    model: HAPModel
    config: TrainConfig
    state: AdamState
    log: list
    best_epoch: int
    best_metric: float
    epoch: int
    encoding: dict
    num_classes: int = 0

    def checkpoint(self) -> "Checkpoint":
        return Checkpoint.from_model(self.model, self.config, self.state, self.best_epoch,
                                     self.encoding, self.num_classes)


def train(config: TrainConfig, data: TaskData, model: Optional[HAPModel] = None,
          on_epoch=None) -> TrainResult:
    """Mini-batch Adam over per-example tapes; keeps the best-validation parameters."""
    if data.task != config.task:
        raise TaskMismatchError(f"config task {config.task!r} does not match data task {data.task!r}")
    split = data.ensure_split(config.split, config.seed)
    model = model or build_model(config, data)
    params = model.parameters()
    state = AdamState()
    rows: list[tuple] = []
    best_metric, best_epoch = -np.inf, 0
    best_values = {k: p.value.copy() for k, p in params.items()}
    best_state = AdamState()
    since_best = 0
    train_idx = list(split["train"])
    val_idx = list(split["val"]) or train_idx
    pool = ThreadPoolExecutor(config.threads) if config.threads > 1 else None
    epoch = 0
    try:
        for epoch in range(1, config.epochs + 1):
            order = np.random.default_rng([config.seed, epoch]).permutation(train_idx).tolist()
            total_loss = 0.0
            for start in range(0, len(order), config.batch_size):
                batch = order[start:start + config.batch_size]
                if pool is None:
                    results = [_example_grad(model, config, data, i, epoch, params) for i in batch]
                else:
                    results = list(pool.map(lambda i: _example_grad(model, config, data, i, epoch, params), batch))
                summed: dict = {}
                for value, grads in results:  # fixed order reduction
                    if not math.isfinite(value):
                        raise NumericError(f"non-finite loss at epoch {epoch}")
                    total_loss += value
                    for name, g in grads.items():
                        summed[name] = summed[name] + g if name in summed else g.copy()
                scaled = {name: g / len(batch) for name, g in summed.items()}
                adam_step(params, scaled, state, config.lr)
            mean_loss = total_loss / max(1, len(order))
            try:
                metrics = evaluate(model, data, val_idx, config.scale)
            except tn.DomainError as exc:
                raise NumericError(f"non-finite parameters after epoch {epoch}: {exc}") from exc
            rows.append((epoch, "train", "loss", mean_loss))
            for name, value in metrics.items():
                rows.append((epoch, "val", name, value))
            log.info("epoch %d loss %.6f val %s", epoch, mean_loss, metrics)
            if on_epoch is not None:
                on_epoch(epoch, mean_loss, metrics)
            if metrics["accuracy"] > best_metric:
                best_metric, best_epoch, since_best = metrics["accuracy"], epoch, 0
                best_values = {k: p.value.copy() for k, p in params.items()}
                best_state = AdamState({k: v.copy() for k, v in state.m.items()},
                                       {k: v.copy() for k, v in state.v.items()}, state.t)
            else:
                since_best += 1
                if since_best >= config.patience:
                    log.info("early stop at epoch %d (best %d)", epoch, best_epoch)
                    break
    finally:
        if pool is not None:
            pool.shutdown()
    for k, p in params.items():
        p.value[...] = best_values[k]
    return TrainResult(model, config, best_state, rows, best_epoch, float(best_metric), epoch,
                       data.encoding, data.num_classes)


def write_metric_log(rows: Sequence[tuple], path: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "split", "metric", "value"])
        for epoch, split, metric, value in rows:
            w.writerow([epoch, split, metric, repr(float(value))])


# ---------------------------------------------------------------------------
# checkpoints


@dataclass
class Checkpoint:
    params: dict
    adam_m: dict
    adam_v: dict
    adam_t: int
    epoch: int
    config: dict
    encoding: dict
    num_classes: int
    config_hash: str

    @classmethod
    def from_model(cls, model: HAPModel, config: TrainConfig, state: AdamState, epoch: int,
                   encoding: dict, num_classes: int) -> "Checkpoint":
        return cls(
            params={k: p.value.copy() for k, p in model.parameters().items()},
            adam_m={k: np.asarray(v).copy() for k, v in state.m.items()},
            adam_v={k: np.asarray(v).copy() for k, v in state.v.items()},
            adam_t=state.t,
            epoch=epoch,
            config=config.to_dict(),
            encoding=dict(encoding),
            num_classes=num_classes,
            config_hash=config.fingerprint(),
        )

    def save(self, path: str) -> None:
        arrays = {f"param/{k}": v for k, v in self.params.items()}
        arrays.update({f"adam_m/{k}": v for k, v in self.adam_m.items()})
        arrays.update({f"adam_v/{k}": v for k, v in self.adam_v.items()})
        meta = {
            "adam_t": self.adam_t, "epoch": self.epoch, "config": self.config,
            "encoding": self.encoding, "num_classes": self.num_classes, "config_hash": self.config_hash,
        }
        arrays["meta"] = np.array(json.dumps(meta, sort_keys=True))
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)

    @classmethod
    def load(cls, path: str) -> "Checkpoint":
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(str(z["meta"]))
            groups = {"param": {}, "adam_m": {}, "adam_v": {}}
            for key in z.files:
                if "/" in key:
                    group, name = key.split("/", 1)
                    groups[group][name] = z[key]
        return cls(groups["param"], groups["adam_m"], groups["adam_v"], meta["adam_t"], meta["epoch"],
                   meta["config"], meta["encoding"], meta["num_classes"], meta["config_hash"])

    def train_config(self) -> TrainConfig:
        return TrainConfig.from_dict(self.config)

    def build_model(self) -> HAPModel:
        config = self.train_config()
        mc = ModelConfig(
            in_dim=encoding_width(self.encoding), hidden=config.hidden, layer_kind=config.layer_kind,
            layers_per_block=config.layers_per_block, clusters=config.clusters, tau=config.tau,
            column_mode=config.column_mode, pool=config.pool,
            n_classes=self.num_classes if config.task == "classify" else 0, seed=config.seed,
            bias=config.bias,
        )
        model = HAPModel(mc)
        params = model.parameters()
        if set(params) != set(self.params):
            raise ValueError("checkpoint parameters do not match the model layout")
        for k, p in params.items():
            if p.shape != self.params[k].shape:
                raise ValueError(f"checkpoint shape mismatch for {k}")
            p.value[...] = self.params[k]
        return model

    def adam_state(self) -> AdamState:
        return AdamState(dict(self.adam_m), dict(self.adam_v), self.adam_t)


def parameter_hash(model: HAPModel) -> str:
    h = hashlib.sha256()
    for name, p in sorted(model.parameters().items()):
        h.update(name.encode())
        h.update(p.value.tobytes())
    return h.hexdigest()
