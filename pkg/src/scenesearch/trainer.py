"""Training loop: per-layer positive/negative sampling, top-down scoring, BCE, Adam.

Each step samples a batch of graphs, draws an occluded target per graph,
samples one positive and one negative node per hierarchy layer, scores them
top-down so child evaluations start from parent-informed vectors, averages
the binary cross entropy over every sampled node, and applies one Adam
update end-to-end.
"""

from __future__ import annotations

import csv
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import nn
from .model import GraphForward, Model, save_model
from .procgen import GenConfig, NoEligibleTargetError, hidden_objects, sample_target
from .scenegraph import NodeKind, SceneGraph, TargetSpec, occluders_of, visible_objects


class TrainError(Exception):
    pass


@dataclass
class TrainConfig:
    epochs: int = 50
    batches_per_epoch: int = 100
    graphs_per_batch: int = 10
    seed: int = 0
    alpha: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    variant: str = "full"

    def validate(self) -> None:
        if min(self.epochs, self.batches_per_epoch, self.graphs_per_batch) < 0:
            raise TrainError("training counts must be non-negative")
        if self.batches_per_epoch < 1 or self.graphs_per_batch < 1:
            raise TrainError("batches_per_epoch and graphs_per_batch must be >= 1")


@dataclass
class LayerSample:
    layer: NodeKind
    positive: int
    negative: int | None


LAYER_ORDER = (NodeKind.ROOM, NodeKind.STORAGE, NodeKind.SHELF, NodeKind.OBJECT)


def _uniform(pool: list[int], rng: np.random.Generator) -> int:
    return pool[int(rng.integers(0, len(pool)))]


def sample_layer_nodes(graph: SceneGraph, target: TargetSpec,
                       rng: np.random.Generator) -> list[LayerSample]:
    """One positive and (when one exists) one negative node per layer.

    Positives are the target's ancestor containers and a visible occluder;
    object negatives prefer visible objects on the target's own shelf, since
    negatives elsewhere are trivially separated by shelf context.  Layers
    with no valid positive or negative are omitted accordingly.
    """
    shelf_id = graph.parent_of(target.object_id)
    storage_id = graph.parent_of(shelf_id)
    room_id = graph.parent_of(storage_id)

    samples: list[LayerSample] = []
    for layer, positive in ((NodeKind.ROOM, room_id), (NodeKind.STORAGE, storage_id),
                            (NodeKind.SHELF, shelf_id)):
        others = sorted(n.id for n in graph.iter_kind(layer) if n.id != positive)
        negative = _uniform(others, rng) if others else None
        samples.append(LayerSample(layer=layer, positive=positive, negative=negative))

    vis = visible_objects(graph, shelf_id)
    occ = occluders_of(graph, shelf_id, target.object_id)
    if not occ:
        raise TrainError(f"target {target.object_id} is not occluded")
    visible_occluders = sorted(o for o in vis if o in occ)
    if visible_occluders:
        positive = _uniform(visible_occluders, rng)
        same_shelf = sorted(o for o in vis if o not in occ)
        elsewhere = []
        for other in graph.iter_kind(NodeKind.SHELF):
            if other.id != shelf_id:
                elsewhere.extend(visible_objects(graph, other.id))
        elsewhere.sort()
        # Preference, not exclusivity: same-shelf hard negatives alone leave
        # the object scores uncalibrated against wrong-shelf objects.
        if same_shelf and (not elsewhere or rng.random() < 0.5):
            negative = _uniform(same_shelf, rng)
        elif elsewhere:
            negative = _uniform(elsewhere, rng)
        else:
            negative = None
        samples.append(LayerSample(layer=NodeKind.OBJECT, positive=positive,
                                   negative=negative))
    return samples


def score_samples(model: Model, graph: SceneGraph, target: TargetSpec,
                  samples: list[LayerSample], tape: nn.Tape | None = None
                  ) -> list[tuple[LayerSample, int, int, nn.Tensor]]:
    """Score sampled nodes top-down; returns (sample, node, label, p) entries."""
    fwd = GraphForward(model, graph, target.description, tape=tape,
                       observe_all_shelves=True)
    out = []
    for sample in samples:
        out.append((sample, sample.positive, 1, fwd.eval_node_tensor(sample.positive)))
        if sample.negative is not None:
            out.append((sample, sample.negative, 0, fwd.eval_node_tensor(sample.negative)))
    return out


def train_step(model: Model, graphs: list[SceneGraph], rng: np.random.Generator,
               warn=lambda msg: print(msg, file=sys.stderr)) -> float:
    """One optimization step over a batch of graphs; returns the mean loss."""
    tape = nn.Tape()
    losses: list[nn.Tensor] = []
    for graph in graphs:
        try:
            target = sample_target(graph, rng, mode="train")
        except NoEligibleTargetError:
            warn("train_step: graph without an occluded object, skipping")
            continue
        samples = sample_layer_nodes(graph, target, rng)
        for _, _, label, p in score_samples(model, graph, target, samples, tape=tape):
            losses.append(nn.bce_loss(tape, p, label))
    if not losses:
        raise TrainError("no trainable samples in the batch")
    total = nn.mean_vectors(tape, losses)
    nn.backward(tape, total, model.params)
    nn.adam_step(model.params)
    return float(total.data.reshape(()))


def _epoch_accuracy(model: Model, graphs: list[SceneGraph], rng: np.random.Generator,
                    config: GenConfig | None) -> tuple[float, float]:
    """Balanced classification accuracy on held-out targets (threshold 0.5)."""
    mode = "test" if config is not None else "train"
    container = [0, 0]
    objects = [0, 0]
    for graph in graphs:
        try:
            target = sample_target(graph, rng, mode=mode, config=config)
            samples = sample_layer_nodes(graph, target, rng)
        except (NoEligibleTargetError, TrainError):
            continue
        for sample, _, label, p in score_samples(model, graph, target, samples):
            predicted = 1 if float(p.data.reshape(())) >= 0.5 else 0
            bucket = objects if sample.layer == NodeKind.OBJECT else container
            bucket[0] += int(predicted == label)
            bucket[1] += 1
    c_acc = 100.0 * container[0] / container[1] if container[1] else float("nan")
    o_acc = 100.0 * objects[0] / objects[1] if objects[1] else float("nan")
    return c_acc, o_acc


def train(model: Model, dataset: list[SceneGraph], config: TrainConfig,
          out_dir=None, gen_config: GenConfig | None = None,
          metric_graphs: int = 20,
          log=lambda msg: print(msg, file=sys.stderr)) -> list[dict]:
    """Run the full schedule; returns per-epoch metric rows.

    Batches draw graphs uniformly with replacement; a drawn graph with no
    occluded object is redrawn up to 10 times.  Per-epoch metrics use
    held-out-asset targets when the generation config is available.  When
    ``out_dir`` is given, a checkpoint is written every epoch plus a final
    ``checkpoint.json`` and ``metrics.csv``.
    """
    config.validate()
    if not dataset:
        raise TrainError("training dataset is empty")
    st = model.params.adam
    st.alpha, st.beta1, st.beta2, st.eps = config.alpha, config.beta1, config.beta2, config.eps
    rng = np.random.default_rng(config.seed)
    eligible_cache: dict[int, bool] = {}

    def eligible(idx: int) -> bool:
        flag = eligible_cache.get(idx)
        if flag is None:
            flag = bool(hidden_objects(dataset[idx]))
            eligible_cache[idx] = flag
        return flag

    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    metrics: list[dict] = []
    for epoch in range(1, config.epochs + 1):
        epoch_losses = []
        for _ in range(config.batches_per_epoch):
            batch = []
            for _ in range(config.graphs_per_batch):
                for _ in range(10):
                    idx = int(rng.integers(0, len(dataset)))
                    if eligible(idx):
                        batch.append(dataset[idx])
                        break
                else:
                    log("train: no eligible graph after 10 draws, slot skipped")
            epoch_losses.append(train_step(model, batch, rng, warn=log))
        metric_rng = np.random.default_rng([config.seed, 0x5EED, epoch])
        c_acc, o_acc = _epoch_accuracy(model, dataset[:metric_graphs], metric_rng, gen_config)
        row = {"epoch": epoch, "mean_loss": float(np.mean(epoch_losses)),
               "container_acc": c_acc, "object_acc": o_acc}
        metrics.append(row)
        log(f"epoch {epoch}/{config.epochs} loss {row['mean_loss']:.4f} "
            f"container_acc {c_acc:.1f} object_acc {o_acc:.1f}")
        if out_dir is not None:
            save_model(out_dir / f"checkpoint_epoch_{epoch:03d}.json", model)
    if out_dir is not None:
        save_model(out_dir / "checkpoint.json", model)
        write_metrics_csv(out_dir / "metrics.csv", metrics)
    return metrics


def write_metrics_csv(path, metrics: list[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "mean_loss", "container_acc", "object_acc"])
        for row in metrics:
            writer.writerow([row["epoch"], f"{row['mean_loss']:.6f}",
                             f"{row['container_acc']:.4f}", f"{row['object_acc']:.4f}"])
