"""Command-line entry point: ``hap generate | train | eval | embed | ged | bench``.

Exit codes: 0 success, 1 usage error, 2 data or format error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import statistics
import sys
import time
from dataclasses import fields

import numpy as np

from . import __version__
from . import tensor as tn
from .coarsen import COLUMN_MODES, CoarseningLayer, coarsen_forward
from .datagen import (
    GED_NODE_CAP,
    GedCapError,
    gen_matching_dataset,
    ged_exact,
    make_pair_ground_truth,
    make_triplets,
    pairs_path,
    random_small_graphs,
    read_pairs,
    read_triplets,
    toy_classification_graphs,
    triplets_path,
    write_pairs,
    write_triplets,
)
from .graph import GraphDataset, GraphFormatError, er_random_graph, find_dataset_name, load_tu_dataset, read_edge_list, write_tu_dataset
from .model import POOL_KINDS
from .train import (
    TASKS,
    Checkpoint,
    NumericError,
    TaskData,
    TaskMismatchError,
    TrainConfig,
    apply_encoding,
    evaluate,
    train,
    write_metric_log,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("hap")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------------------
# config handling

_INT_KEYS = {"epochs", "batch_size", "seed", "layers_per_block", "patience", "threads", "hidden"}
_FLOAT_KEYS = {"lr", "tau", "scale"}
_BOOL_KEYS = {"paper_literal_losses", "bias"}
_CONFIG_KEYS = {f.name for f in fields(TrainConfig)} | {"coarsen"}


def _coerce(key: str, value):
    if not isinstance(value, str):
        return value
    value = value.strip()
    try:
        if key in _INT_KEYS:
            return int(value)
        if key in _FLOAT_KEYS:
            return float(value)
        if key in _BOOL_KEYS:
            low = value.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(value)
            return low in ("true", "1", "yes")
        if key == "clusters":
            return tuple(int(x) for x in value.split(","))
        if key == "split":
            return tuple(float(x) for x in value.replace(":", ",").split(","))
        if key == "coarsen":
            return int(value)
    except ValueError:
        raise UsageError(f"bad value for {key}: {value!r}") from None
    return value


def read_config_file(path: str) -> dict:
    """``key = value`` lines; ``#`` starts a comment; keys may use - or _."""
    out = {}
    try:
        with open(path) as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise DataError(f"cannot read config file {path}: {exc}") from None
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _CONFIG_KEYS:
            raise UsageError(f"{path}:{lineno}: unknown config key {key!r}")
        out[key] = _coerce(key, value)
    return out


def default_clusters(k: int) -> tuple:
    """Cluster counts for K modules: 16, then /4 per module, ending in a single cluster."""
    if k < 1:
        raise UsageError("--coarsen must be at least 1")
    return tuple(max(1, 16 // 4 ** i) for i in range(k - 1)) + (1,)


def resolve_config(flags: dict, config_path: str | None) -> TrainConfig:
    """Flags override the config file, which overrides built-in defaults."""
    merged = read_config_file(config_path) if config_path else {}
    merged.update({k: v for k, v in flags.items() if v is not None})
    k = merged.pop("coarsen", None)
    if k is not None:
        if "clusters" in merged and len(merged["clusters"]) != k:
            raise UsageError(f"--coarsen {k} conflicts with --clusters {merged['clusters']}")
        merged.setdefault("clusters", default_clusters(k))
    try:
        return TrainConfig(**merged)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None


# ---------------------------------------------------------------------------
# data directories


def _files_digest(directory: str, name: str) -> str:
    h = hashlib.sha256()
    for fname in sorted(os.listdir(directory)):
        if fname.startswith(name + "_") and fname.endswith(".txt"):
            h.update(fname.encode())
            with open(os.path.join(directory, fname), "rb") as fh:
                h.update(fh.read())
    return h.hexdigest()


def load_task_data(directory: str, task: str, encoding: dict | None = None) -> tuple[TaskData, str]:
    if not os.path.isdir(directory):
        raise DataError(f"data directory {directory} does not exist")
    try:
        name = find_dataset_name(directory)
        ds = load_tu_dataset(directory, name, encode=False)
    except GraphFormatError as exc:
        raise DataError(str(exc)) from None
    records = None
    try:
        if task == "match":
            path = pairs_path(directory, name)
            if not os.path.exists(path):
                raise DataError(f"task 'match' needs pair records in {path}")
            records = read_pairs(path, kind="label")
        elif task == "similarity":
            path = triplets_path(directory, name)
            if not os.path.exists(path):
                raise DataError(f"task 'similarity' needs triplet records in {path}")
            records = read_triplets(path)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    if records is not None:
        n = len(ds.graphs)
        for rec in records:
            ids = [rec.g1, rec.g2] + ([rec.g3] if hasattr(rec, "g3") else [])
            if min(ids) < 0 or max(ids) >= n:
                raise DataError(f"record {rec} references a graph outside 1..{n}")
    try:
        data = TaskData(task, ds.graphs, records, num_classes=ds.num_classes if task == "classify" else 0,
                        encoding=encoding)
    except TaskMismatchError as exc:
        raise DataError(str(exc)) from None
    return data, name


def _write_json(path: str, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _manifest(command: str, argv, **extra) -> dict:
    return {"tool": "hap", "version": __version__, "command": command, "argv": list(argv), **extra}


# ---------------------------------------------------------------------------
# commands


def cmd_generate(args, argv) -> int:
    kind = args.kind
    allowed = {
        "match": {"size", "pairs"},
        "triplet": {"graphs", "max_nodes", "triplets"},
        "toy-classify": {"graphs", "nodes"},
    }[kind]
    for flag in ("size", "pairs", "graphs", "max_nodes", "triplets", "nodes"):
        if getattr(args, flag) is not None and flag not in allowed:
            raise UsageError(f"--{flag.replace('_', '-')} does not apply to 'generate {kind}'")
    rng = np.random.default_rng(args.seed)
    name = args.name or {"match": "MATCH", "triplet": "TRIPLET", "toy-classify": "TOY"}[kind]
    os.makedirs(args.out, exist_ok=True)
    params = {"seed": args.seed, "name": name}
    if kind == "match":
        size = 20 if args.size is None else args.size
        n_pairs = 2500 if args.pairs is None else args.pairs
        if size < 5:
            raise UsageError("--size must be at least 5")
        if n_pairs < 2 or n_pairs % 2:
            raise UsageError("--pairs must be a positive even number (one positive and one negative per base graph)")
        graphs, pairs = gen_matching_dataset(n_pairs // 2, size, rng)
        write_tu_dataset(GraphDataset(graphs, 1), args.out, name)
        write_pairs(pairs, pairs_path(args.out, name))
        params.update(size=size, pairs=n_pairs)
        summary = f"{len(pairs)} pairs over {len(graphs)} graphs ({sum(p.label for p in pairs)} positive)"
    elif kind == "triplet":
        n_graphs = 60 if args.graphs is None else args.graphs
        max_nodes = 8 if args.max_nodes is None else args.max_nodes
        count = 5000 if args.triplets is None else args.triplets
        if max_nodes > GED_NODE_CAP or max_nodes < 3:
            raise UsageError(f"--max-nodes must lie in 3..{GED_NODE_CAP} (exact GED cap)")
        if n_graphs < 3 or count < 1:
            raise UsageError("need --graphs >= 3 and --triplets >= 1")
        graphs = random_small_graphs(n_graphs, max_nodes, rng)
        table = make_pair_ground_truth(graphs)
        trips = make_triplets(n_graphs, table, count, rng)
        write_tu_dataset(GraphDataset(graphs, 1), args.out, name)
        write_triplets(trips, triplets_path(args.out, name))
        np.savetxt(os.path.join(args.out, f"{name}_ged.txt"), table, fmt="%g", delimiter="\t")
        params.update(graphs=n_graphs, max_nodes=max_nodes, triplets=count)
        summary = f"{len(trips)} triplets over {n_graphs} graphs"
    else:
        n_graphs = 500 if args.graphs is None else args.graphs
        nodes = 40 if args.nodes is None else args.nodes
        if n_graphs < 2 or nodes < 1:
            raise UsageError("need --graphs >= 2 and --nodes >= 1")
        graphs = toy_classification_graphs(n_graphs, nodes, rng)
        write_tu_dataset(GraphDataset(graphs, 2), args.out, name)
        params.update(graphs=n_graphs, nodes=nodes)
        summary = f"{n_graphs} graphs, 2 classes"
    _write_json(os.path.join(args.out, "manifest.json"), _manifest(
        "generate", argv, kind=kind, params=params, dataset_fingerprint=_files_digest(args.out, name)))
    print(f"wrote {name} to {args.out}: {summary}")
    return EXIT_OK


def _train_flags(args) -> dict:
    return {
        "task": args.task, "lr": args.lr, "epochs": args.epochs, "batch_size": args.batch_size,
        "seed": args.seed, "layer_kind": args.layer, "layers_per_block": args.layers_per_block,
        "coarsen": args.coarsen, "clusters": _coerce("clusters", args.clusters) if args.clusters else None,
        "hidden": args.hidden, "tau": args.tau, "scale": args.scale,
        "split": _coerce("split", args.split) if args.split else None,
        "column_mode": args.column_mode, "pool": args.pool, "patience": args.patience,
        "threads": args.threads, "paper_literal_losses": True if args.paper_literal_losses else None,
        "bias": False if args.no_bias else None,
    }


def cmd_train(args, argv) -> int:
    config = resolve_config(_train_flags(args), args.config)
    data, name = load_task_data(args.data, config.task)
    os.makedirs(args.out, exist_ok=True)
    outputs = {k: os.path.join(args.out, v) for k, v in
               (("checkpoint", "best.ckpt"), ("metrics", "metrics.csv"), ("manifest", "manifest.json"))}
    _write_json(outputs["manifest"], _manifest(
        "train", argv, config=config.to_dict(), seed=config.seed, config_hash=config.fingerprint(),
        dataset={"path": os.path.abspath(args.data), "name": name,
                 "fingerprint": _files_digest(args.data, name)},
        outputs=outputs))
    t0 = time.time()
    result = train(config, data, on_epoch=lambda e, loss, m: log.info("epoch %d loss %.5f val %s", e, loss, m))
    test = evaluate(result.model, data, data.split["test"], config.scale) if data.split["test"] else {}
    rows = list(result.log) + [(result.best_epoch, "test", k, v) for k, v in test.items()]
    write_metric_log(rows, outputs["metrics"])
    result.checkpoint().save(outputs["checkpoint"])
    print(f"best epoch {result.best_epoch}: val accuracy {result.best_metric:.4f}; "
          f"test {json.dumps(test, sort_keys=True)}; {time.time() - t0:.1f}s")
    return EXIT_OK


def _load_checkpoint(path: str) -> Checkpoint:
    try:
        return Checkpoint.load(path)
    except (OSError, KeyError, ValueError) as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from None


def cmd_eval(args, argv) -> int:
    ckpt = _load_checkpoint(args.checkpoint)
    config = ckpt.train_config()
    data, _ = load_task_data(args.data, config.task, encoding=ckpt.encoding)
    model = ckpt.build_model()
    split = data.ensure_split(config.split, config.seed)
    indices = range(data.n_examples) if args.split == "all" else split[args.split]
    metrics = evaluate(model, data, indices, config.scale)
    text = json.dumps({"split": args.split, "task": config.task, **metrics}, sort_keys=True)
    print(text)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    return EXIT_OK


def cmd_embed(args, argv) -> int:
    ckpt = _load_checkpoint(args.checkpoint)
    try:
        ds = load_tu_dataset(args.data, find_dataset_name(args.data), encode=False)
    except (GraphFormatError, OSError) as exc:
        raise DataError(str(exc)) from None
    graphs = apply_encoding(ds.graphs, ckpt.encoding)
    model = ckpt.build_model()
    with tn.no_grad():
        rows = [model.encode_graph(g).final.value[0] for g in graphs]
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(out)
        w.writerow(["graph_id", "label"] + [f"v{k + 1}" for k in range(len(rows[0]))])
        for i, (g, vec) in enumerate(zip(graphs, rows), 1):
            w.writerow([i, "" if g.label is None else g.label] + [repr(float(x)) for x in vec])
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


def cmd_ged(args, argv) -> int:
    try:
        g1 = read_edge_list(args.graph1)
        g2 = read_edge_list(args.graph2)
    except OSError as exc:
        raise DataError(str(exc)) from None
    except GraphFormatError as exc:
        raise DataError(str(exc)) from None
    try:
        res = ged_exact(g1, g2, return_path=True)
    except GedCapError as exc:
        raise DataError(f"{exc}; exact search is exponential in the node count") from None
    cost = res.cost
    print(f"GED {int(cost) if float(cost).is_integer() else cost}")
    for op in res.operations:
        print("  " + " ".join(str(x) for x in op))
    return EXIT_OK


def bench_sizes(sizes, reps: int, features: int, clusters: int, seed: int, p: float = 0.1) -> list[tuple]:
    """Median wall time of one coarsening forward pass (no recording) per size."""
    rng = np.random.default_rng(seed)
    layer = CoarseningLayer(features, clusters, rng)
    out = []
    for n in sizes:
        g = er_random_graph(n, p, rng)
        H = rng.normal(size=(n, features))
        times = []
        with tn.no_grad():
            coarsen_forward(layer, H, g.adjacency)  # warm-up
            for _ in range(reps):
                t = time.perf_counter()
                coarsen_forward(layer, H, g.adjacency)
                times.append(time.perf_counter() - t)
        out.append((n, statistics.median(times)))
    return out


def cmd_bench(args, argv) -> int:
    try:
        sizes = [int(s) for s in args.sizes.split(",") if s.strip()]
    except ValueError:
        raise UsageError(f"--sizes must be comma-separated integers, got {args.sizes!r}") from None
    if not sizes or min(sizes) < 1:
        raise UsageError("--sizes needs at least one positive size")
    if args.reps < 20:
        raise UsageError("--reps must be at least 20")
    rows = bench_sizes(sizes, args.reps, args.features, args.clusters, args.seed)
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(out)
        w.writerow(["n", "median_seconds"])
        for n, t in rows:
            w.writerow([n, f"{t:.9f}"])
    finally:
        if out is not sys.stdout:
            out.close()
    for (n0, t0), (n1, t1) in zip(rows, rows[1:]):
        print(f"# ratio t({n1})/t({n0}) = {t1 / t0:.3f}")
    if len(rows) >= 2:
        slope = np.polyfit(np.log([n for n, _ in rows]), np.log([t for _, t in rows]), 1)[0]
        print(f"# log-log slope = {slope:.3f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hap", description="Hierarchical attention pooling for graphs.")
    p.add_argument("--version", action="version", version=f"hap {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    g = sub.add_parser("generate", help="write a synthetic dataset")
    g.add_argument("kind", choices=["match", "triplet", "toy-classify"])
    g.add_argument("--size", type=int, help="base graph node count (match)")
    g.add_argument("--pairs", type=int, help="number of labelled pairs, even (match)")
    g.add_argument("--graphs", type=int, help="graph count (triplet, toy-classify)")
    g.add_argument("--max-nodes", type=int, help="largest graph (triplet)")
    g.add_argument("--triplets", type=int, help="triplet count (triplet)")
    g.add_argument("--nodes", type=int, help="nodes per graph (toy-classify)")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--name", help="dataset file prefix")
    g.add_argument("--out", required=True, help="output directory")

    t = sub.add_parser("train", help="train a model and write checkpoint + metric log")
    t.add_argument("--task", choices=TASKS)
    t.add_argument("--data", required=True)
    t.add_argument("--config", help="key = value config file")
    t.add_argument("--lr", type=float)
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--layer", choices=["gcn", "gat"])
    t.add_argument("--layers-per-block", type=int)
    t.add_argument("--coarsen", type=int, help="number of coarsening modules K")
    t.add_argument("--clusters", help="comma-separated cluster counts, e.g. 16,1")
    t.add_argument("--hidden", type=int)
    t.add_argument("--tau", type=float)
    t.add_argument("--scale", type=float)
    t.add_argument("--split", help="train,val,test ratios, e.g. 0.8,0.1,0.1")
    t.add_argument("--column-mode", choices=COLUMN_MODES)
    t.add_argument("--pool", choices=POOL_KINDS + ("mean-att",))
    t.add_argument("--patience", type=int)
    t.add_argument("--threads", type=int)
    t.add_argument("--paper-literal-losses", action="store_true")
    t.add_argument("--no-bias", action="store_true", help="bias-free embedding layers")
    t.add_argument("--out", default="run")

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", choices=["train", "val", "test", "all"], default="test")
    e.add_argument("--out", help="also write the metrics JSON here")

    m = sub.add_parser("embed", help="export final-level graph embeddings as CSV")
    m.add_argument("--checkpoint", required=True)
    m.add_argument("--data", required=True)
    m.add_argument("--out", help="CSV path (default stdout)")

    d = sub.add_parser("ged", help="exact graph edit distance between two edge-list files")
    d.add_argument("graph1")
    d.add_argument("graph2")

    b = sub.add_parser("bench", help="time one coarsening module across graph sizes")
    b.add_argument("--sizes", default="128,256")
    b.add_argument("--reps", type=int, default=20)
    b.add_argument("--features", type=int, default=64)
    b.add_argument("--clusters", type=int, default=16)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", help="CSV path (default stdout)")
    return p


COMMANDS = {
    "generate": cmd_generate, "train": cmd_train, "eval": cmd_eval,
    "embed": cmd_embed, "ged": cmd_ged, "bench": cmd_bench,
}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args, argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
