"""Evaluation harness: classification accuracy and search-efficiency metrics.

Accuracy mirrors the training sampler: per test graph one held-out target is
drawn, plus one positive and one negative node per layer; a prediction is
score >= 0.5.  Efficiency runs one search episode per (graph, container
policy, object policy) cell with the same per-graph target across cells and
aggregates mean/median action counts and success CDFs.
"""

from __future__ import annotations

import csv
import json
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from hashlib import sha256
from pathlib import Path

import numpy as np

from .procgen import GenConfig, NoEligibleTargetError, sample_target
from .scenegraph import NodeKind, SceneGraph, TargetSpec, serialize_graph, deserialize_graph
from .search import Policy, PolicyRoleError, search_episode
from .trainer import TrainError, sample_layer_nodes

REPORT_FORMAT_VERSION = 1


class EvalError(Exception):
    pass


@dataclass
class AccuracyReport:
    policy: str
    container_accuracy: float
    object_accuracy: float
    per_layer: dict[str, tuple[int, int]]
    container_samples: int
    object_samples: int
    skipped_graphs: int


@dataclass
class EfficiencyReport:
    container_policies: list[str]
    object_policies: list[str]
    counts: dict[tuple[str, str], list[int]]
    episodes_per_cell: int
    skipped_graphs: int

    def mean(self, cell: tuple[str, str]) -> float:
        return float(np.mean(self.counts[cell]))

    def median(self, cell: tuple[str, str]) -> float:
        return float(statistics.median(self.counts[cell]))

    def cdf(self, cell: tuple[str, str]) -> list[tuple[int, float]]:
        """(action budget, fraction of episodes solved within it) points."""
        counts = sorted(self.counts[cell])
        n = len(counts)
        points = []
        for x in sorted(set(counts)):
            solved = sum(1 for c in counts if c <= x)
            points.append((x, solved / n))
        return points


def _graph_targets(dataset: list[SceneGraph], gen_config: GenConfig, seed: int):
    """Deterministic held-out target per graph; graphs without one are skipped."""
    pairs = []
    skipped = 0
    for i, graph in enumerate(dataset):
        rng = np.random.default_rng([seed, i])
        try:
            pairs.append((i, graph, sample_target(graph, rng, "test", gen_config)))
        except NoEligibleTargetError:
            skipped += 1
    return pairs, skipped


def classification_accuracy(policy: Policy, dataset: list[SceneGraph],
                            gen_config: GenConfig, samples_per_graph: int = 1,
                            seed: int = 0) -> AccuracyReport:
    """Balanced positive/negative accuracy per layer at threshold 0.5."""
    if not dataset:
        raise EvalError("accuracy evaluation needs a nonempty dataset")
    per_layer = {kind.value: [0, 0] for kind in
                 (NodeKind.ROOM, NodeKind.STORAGE, NodeKind.SHELF, NodeKind.OBJECT)}
    pairs, skipped = _graph_targets(dataset, gen_config, seed)
    for i, graph, target in pairs:
        rng = np.random.default_rng([seed, i, 1])
        # model policies mirror training observability during accuracy runs
        bound = policy.bind(graph, target, rng, observe_all_shelves=True)
        for _ in range(samples_per_graph):
            try:
                samples = sample_layer_nodes(graph, target, rng)
            except TrainError:
                continue
            for sample in samples:
                is_object = sample.layer == NodeKind.OBJECT
                if is_object and not policy.scores_objects:
                    continue
                if not is_object and not policy.scores_containers:
                    continue
                entries = [(sample.positive, 1)]
                if sample.negative is not None:
                    entries.append((sample.negative, 0))
                for node_id, label in entries:
                    score = bound.score_node(node_id)
                    predicted = 1 if score >= 0.5 else 0
                    bucket = per_layer[sample.layer.value]
                    bucket[0] += int(predicted == label)
                    bucket[1] += 1

    def acc(kinds) -> tuple[float, int]:
        correct = sum(per_layer[k][0] for k in kinds)
        total = sum(per_layer[k][1] for k in kinds)
        return (100.0 * correct / total if total else float("nan")), total

    container_acc, container_n = acc(("room", "storage", "shelf"))
    object_acc, object_n = acc(("object",))
    return AccuracyReport(
        policy=policy.name,
        container_accuracy=container_acc,
        object_accuracy=object_acc,
        per_layer={k: (v[0], v[1]) for k, v in per_layer.items()},
        container_samples=container_n,
        object_samples=object_n,
        skipped_graphs=skipped,
    )


# ---------------------------------------------------------------------------
# Efficiency matrix
# ---------------------------------------------------------------------------

def episode_seed(seed: int, graph_index: int, c_index: int, o_index: int) -> int:
    value = seed
    for part in (graph_index, c_index, o_index):
        value = (value * 1_000_003 + part) % (2 ** 63)
    return value


_WORKER_CTX: dict = {}


def _init_worker(ctx: dict) -> None:
    _WORKER_CTX.update(ctx)


def _run_graph_cells(task) -> tuple[int, dict]:
    index, graph_line, target_obj = task
    ctx = _WORKER_CTX
    graph = deserialize_graph(graph_line)
    target = TargetSpec(**target_obj)
    out = {}
    for ci, cp in enumerate(ctx["containers"]):
        for oi, op in enumerate(ctx["objects"]):
            trace = search_episode(
                graph, target, cp, op, t0=ctx["t0"],
                rng=episode_seed(ctx["seed"], index, ci, oi))
            out[(cp.name, op.name)] = trace.total_actions
    return index, out


def efficiency_matrix(container_policies: list[Policy], object_policies: list[Policy],
                      dataset: list[SceneGraph], gen_config: GenConfig,
                      seed: int = 0, t0: float = 0.1, jobs: int = 1) -> EfficiencyReport:
    """Action counts for every policy pair over shared per-graph targets."""
    if not dataset:
        raise EvalError("efficiency evaluation needs a nonempty dataset")
    for p in container_policies:
        if not p.scores_containers:
            raise PolicyRoleError(f"policy {p.name!r} cannot select containers")
    for p in object_policies:
        if not p.scores_objects:
            raise PolicyRoleError(f"policy {p.name!r} cannot select objects")
    pairs, skipped = _graph_targets(dataset, gen_config, seed)
    tasks = [(i, serialize_graph(graph),
              {"object_id": t.object_id, "description": t.description,
               "category": t.category})
             for i, graph, t in pairs]
    ctx = {"containers": container_policies, "objects": object_policies,
           "seed": seed, "t0": t0}
    results: list[tuple[int, dict]] = []
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker,
                                 initargs=(ctx,)) as ex:
            results = list(ex.map(_run_graph_cells, tasks))
    else:
        _init_worker(ctx)
        results = [_run_graph_cells(task) for task in tasks]
    results.sort(key=lambda r: r[0])

    counts: dict[tuple[str, str], list[int]] = {
        (c.name, o.name): [] for c in container_policies for o in object_policies}
    for _, cells in results:
        for key, count in cells.items():
            counts[key].append(count)
    return EfficiencyReport(
        container_policies=[p.name for p in container_policies],
        object_policies=[p.name for p in object_policies],
        counts=counts,
        episodes_per_cell=len(results),
        skipped_graphs=skipped,
    )


# ---------------------------------------------------------------------------
# Report files
# ---------------------------------------------------------------------------

def write_report(out_dir, accuracy_reports: list[AccuracyReport] | None = None,
                 efficiency: EfficiencyReport | None = None,
                 manifest_extra: dict | None = None) -> list[str]:
    """Write CSV tables, CDF data, and a run manifest; returns file names.

    Outputs are byte-deterministic for identical inputs: fixed column
    orders, fixed float formatting, no timestamps.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    def fmt(x: float) -> str:
        return "nan" if x != x else f"{x:.4f}"

    if accuracy_reports:
        path = out_dir / "accuracy.csv"
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["policy", "container_accuracy", "object_accuracy",
                             "room_accuracy", "storage_accuracy", "shelf_accuracy",
                             "container_samples", "object_samples"])
            for rep in accuracy_reports:
                def layer_acc(kind):
                    correct, total = rep.per_layer[kind]
                    return 100.0 * correct / total if total else float("nan")
                writer.writerow([rep.policy, fmt(rep.container_accuracy),
                                 fmt(rep.object_accuracy), fmt(layer_acc("room")),
                                 fmt(layer_acc("storage")), fmt(layer_acc("shelf")),
                                 rep.container_samples, rep.object_samples])
        written.append(path.name)

    if efficiency is not None:
        for stat, fname in (("mean", "matrix_mean.csv"), ("median", "matrix_median.csv")):
            path = out_dir / fname
            with open(path, "w", encoding="utf-8", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["container\\object"] + efficiency.object_policies)
                for c in efficiency.container_policies:
                    row = [c]
                    for o in efficiency.object_policies:
                        value = (efficiency.mean((c, o)) if stat == "mean"
                                 else efficiency.median((c, o)))
                        row.append(f"{value:.4f}")
                    writer.writerow(row)
            written.append(fname)

        path = out_dir / "cdf.csv"
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["container_policy", "object_policy", "actions", "fraction"])
            for c in efficiency.container_policies:
                for o in efficiency.object_policies:
                    for x, y in efficiency.cdf((c, o)):
                        writer.writerow([c, o, x, f"{y:.6f}"])
        written.append("cdf.csv")

    manifest = {"format_version": REPORT_FORMAT_VERSION, "kind": "report"}
    if manifest_extra:
        manifest.update(manifest_extra)
    if efficiency is not None:
        manifest["episodes_per_cell"] = efficiency.episodes_per_cell
        manifest["skipped_graphs"] = efficiency.skipped_graphs
    files_hash = {}
    for name in written:
        files_hash[name] = sha256((out_dir / name).read_bytes()).hexdigest()
    manifest["files_sha256"] = files_hash
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, separators=(",", ":"), sort_keys=True) + "\n",
        encoding="utf-8")
    written.append("manifest.json")
    return written
