"""Featurization, neural message passing, and the two classification heads.

Every node's information is featurized to a 100-d vector by a two-layer MLP
(one featurizer per node role: container, object, target).  A shared
message-passing MLP combines a parent vector with each child vector; child
outputs are averaged and folded back into the parent.  Scoring multiplies a
node vector elementwise with the target vector and applies a three-layer
head (containers and objects have separate heads) ending in a sigmoid.

Variants:
  full                the complete architecture
  no_message_passing  scores raw featurized vectors, no parent/child mixing
  no_object_label     object word vectors zeroed, geometry only
  context_vector      objects represented by [bbox, cosine-to-target] only
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from hashlib import sha256

import numpy as np

from . import nn
from .embeddings import EmbeddingTable, cosine_similarity, embed_phrase
from .scenegraph import (
    IllegalActionError,
    NodeKind,
    SceneGraph,
    visible_objects,
)

VARIANTS = ("full", "no_message_passing", "no_object_label", "context_vector")

FEATURE_DIM = 100
HIDDEN_DIM = 128
HEAD_DIMS = (64, 32)

# Containers featurize their volume in liters scaled by this constant.
VOLUME_NORM = 1000.0

CONTEXT_VECTOR_DIM = 5


class ModelError(Exception):
    pass


class CheckpointError(ModelError):
    pass


@dataclass(frozen=True)
class ArchitectureSpec:
    """Shapes of every layer; hashed into checkpoints."""

    word_dim: int
    variant: str = "full"
    feature_dim: int = FEATURE_DIM
    hidden_dim: int = HIDDEN_DIM
    head_dims: tuple[int, int] = HEAD_DIMS

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ModelError(f"unknown variant {self.variant!r}")
        if min(self.word_dim, self.feature_dim, self.hidden_dim, *self.head_dims) <= 0:
            raise ModelError("all architecture dimensions must be positive")

    @property
    def container_input_dim(self) -> int:
        return self.word_dim + 1

    @property
    def object_input_dim(self) -> int:
        if self.variant == "context_vector":
            return CONTEXT_VECTOR_DIM
        return self.word_dim + 4

    @property
    def target_input_dim(self) -> int:
        return self.word_dim

    def uses_message_passing(self) -> bool:
        return self.variant != "no_message_passing"

    def layer_specs(self) -> list[tuple[str, tuple[int, ...]]]:
        def mlp2(prefix, in_dim, out_dim):
            return [(f"{prefix}/fc1/w", (self.hidden_dim, in_dim)),
                    (f"{prefix}/fc1/b", (self.hidden_dim,)),
                    (f"{prefix}/fc2/w", (out_dim, self.hidden_dim)),
                    (f"{prefix}/fc2/b", (out_dim,))]

        def head(prefix):
            h1, h2 = self.head_dims
            return [(f"{prefix}/fc1/w", (h1, self.feature_dim)),
                    (f"{prefix}/fc1/b", (h1,)),
                    (f"{prefix}/fc2/w", (h2, h1)),
                    (f"{prefix}/fc2/b", (h2,)),
                    (f"{prefix}/fc3/w", (1, h2)),
                    (f"{prefix}/fc3/b", (1,))]

        specs = []
        specs += mlp2("feat_container", self.container_input_dim, self.feature_dim)
        specs += mlp2("feat_object", self.object_input_dim, self.feature_dim)
        specs += mlp2("feat_target", self.target_input_dim, self.feature_dim)
        if self.uses_message_passing():
            specs += mlp2("msg", 2 * self.feature_dim, self.feature_dim)
        specs += head("head_container")
        specs += head("head_object")
        return specs

    def to_obj(self) -> dict:
        obj = asdict(self)
        obj["head_dims"] = list(self.head_dims)
        return obj

    @classmethod
    def from_obj(cls, obj: dict) -> "ArchitectureSpec":
        return cls(word_dim=int(obj["word_dim"]), variant=obj["variant"],
                   feature_dim=int(obj["feature_dim"]), hidden_dim=int(obj["hidden_dim"]),
                   head_dims=tuple(obj["head_dims"]))

    def arch_hash(self) -> str:
        return sha256(json.dumps(self.to_obj(), sort_keys=True,
                                 separators=(",", ":")).encode()).hexdigest()


ZERO_INIT_LAYERS = ("head_container/fc3/w", "head_object/fc3/w")


def build_params(arch: ArchitectureSpec, seed: int, zero_heads: bool = True) -> nn.ParamStore:
    """Glorot-initialized parameters; head output layers start at zero so
    every score begins at exactly 0.5 (can be disabled for gradient checks)."""
    zero = ZERO_INIT_LAYERS if zero_heads else ()
    return nn.init_params(arch.layer_specs(), seed=seed, zero_init=zero)


class Model:
    """Parameters plus the embedding table used to featurize labels."""

    def __init__(self, arch: ArchitectureSpec, params: nn.ParamStore, table: EmbeddingTable):
        if table.dim != arch.word_dim:
            raise ModelError(f"embedding dim {table.dim} != architecture word dim {arch.word_dim}")
        self.arch = arch
        self.params = params
        self.table = table
        self._phrase_cache: dict[str, np.ndarray] = {}

    @classmethod
    def create(cls, table: EmbeddingTable, variant: str = "full", seed: int = 0,
               zero_heads: bool = True) -> "Model":
        arch = ArchitectureSpec(word_dim=table.dim, variant=variant)
        return cls(arch, build_params(arch, seed=seed, zero_heads=zero_heads), table)

    def phrase_vector(self, text: str) -> np.ndarray:
        vec = self._phrase_cache.get(text)
        if vec is None:
            vec = embed_phrase(self.table, text)
            self._phrase_cache[text] = vec
        return vec

    def _mlp2(self, tape, prefix, x):
        h = nn.relu(tape, nn.linear(tape, self.params, f"{prefix}/fc1", x))
        return nn.linear(tape, self.params, f"{prefix}/fc2", h)

    def featurize_container(self, tape: nn.Tape, node) -> nn.Tensor:
        if node.kind not in (NodeKind.ROOM, NodeKind.STORAGE, NodeKind.SHELF):
            raise ModelError(f"cannot featurize {node.kind.value} as a container")
        x = nn.Tensor(np.concatenate([self.phrase_vector(node.label),
                                      [node.volume / VOLUME_NORM]]))
        return self._mlp2(tape, "feat_container", x)

    def featurize_object(self, tape: nn.Tape, node, target_raw: np.ndarray) -> nn.Tensor:
        if node.kind != NodeKind.OBJECT:
            raise ModelError(f"cannot featurize {node.kind.value} as an object")
        if node.removed:
            raise IllegalActionError(f"object {node.id} was removed")
        p = node.placement
        bbox = [p.cx, p.cy, p.w, p.h]
        if self.arch.variant == "context_vector":
            sim = cosine_similarity(self.phrase_vector(node.label), target_raw)
            x = nn.Tensor(np.array(bbox + [sim]))
        elif self.arch.variant == "no_object_label":
            x = nn.Tensor(np.concatenate([np.zeros(self.arch.word_dim), bbox]))
        else:
            x = nn.Tensor(np.concatenate([self.phrase_vector(node.label), bbox]))
        return self._mlp2(tape, "feat_object", x)

    def featurize_target(self, tape: nn.Tape, description: str) -> nn.Tensor:
        x = nn.Tensor(self.phrase_vector(description))
        return self._mlp2(tape, "feat_target", x)

    def message_pass(self, tape: nn.Tape, f_p: nn.Tensor,
                     children: list[nn.Tensor]) -> tuple[nn.Tensor, list[nn.Tensor]]:
        """Mix a parent vector with its children; empty children is identity.

        The same weights serve every level of the hierarchy.
        """
        if not children:
            return f_p, []
        new_children = [self._mlp2(tape, "msg", nn.concat(tape, f_p, f_c))
                        for f_c in children]
        agg = nn.mean_vectors(tape, new_children)
        f_p_new = nn.mean_vectors(tape, [f_p, agg])
        return f_p_new, new_children

    def score_node(self, tape: nn.Tape, f_node: nn.Tensor, f_t: nn.Tensor,
                   head: str) -> nn.Tensor:
        if head not in ("container", "object"):
            raise ModelError(f"unknown head {head!r}")
        prefix = f"head_{head}"
        x = nn.elementwise_mul(tape, f_node, f_t)
        h = nn.relu(tape, nn.linear(tape, self.params, f"{prefix}/fc1", x))
        h = nn.relu(tape, nn.linear(tape, self.params, f"{prefix}/fc2", h))
        return nn.sigmoid(tape, nn.linear(tape, self.params, f"{prefix}/fc3", h))


class GraphForward:
    """One forward evaluation context over a graph for a fixed target.

    Holds the target feature vector and the carried child vectors produced
    by each parent's message pass, so that evaluation can proceed top-down
    with children starting from their parent-informed vectors.  With
    ``observe_all_shelves`` every shelf exposes its currently visible
    objects (training and accuracy evaluation); otherwise only explored
    shelves do (search).
    """

    def __init__(self, model: Model, graph: SceneGraph, target_description: str,
                 tape: nn.Tape | None = None, observe_all_shelves: bool = False):
        self.model = model
        self.graph = graph
        self.tape = tape if tape is not None else nn.Tape()
        self.observe_all_shelves = observe_all_shelves
        self.target_raw = model.phrase_vector(target_description)
        self.f_t = model.featurize_target(self.tape, target_description)
        self.carried: dict[int, nn.Tensor] = {}
        self._raw_cache: dict[int, nn.Tensor] = {}
        self._object_pass: dict[tuple, dict[int, nn.Tensor]] = {}

    def _raw(self, node_id: int) -> nn.Tensor:
        feat = self._raw_cache.get(node_id)
        if feat is None:
            node = self.graph.node(node_id)
            if node.kind == NodeKind.OBJECT:
                feat = self.model.featurize_object(self.tape, node, self.target_raw)
            else:
                feat = self.model.featurize_container(self.tape, node)
            self._raw_cache[node_id] = feat
        return feat

    def _start(self, node_id: int) -> nn.Tensor:
        carried = self.carried.get(node_id)
        return carried if carried is not None else self._raw(node_id)

    def _eval_children_ids(self, node) -> list[int]:
        if node.kind in (NodeKind.ROOM, NodeKind.STORAGE):
            return list(node.children)
        if node.kind == NodeKind.SHELF:
            if node.explored or self.observe_all_shelves:
                return visible_objects(self.graph, node.id)
            return []
        raise ModelError(f"{node.kind.value} has no evaluable children")

    def eval_container(self, node_id: int) -> float:
        """Score a room/storage/shelf; stores carried child vectors as a side effect."""
        return float(self.eval_container_tensor(node_id).data.reshape(()))

    def eval_container_tensor(self, node_id: int) -> nn.Tensor:
        node = self.graph.node(node_id)
        if node.kind not in (NodeKind.ROOM, NodeKind.STORAGE, NodeKind.SHELF):
            raise ModelError(f"node {node_id} ({node.kind.value}) is not a scoreable container")
        if not self.model.arch.uses_message_passing():
            return self.model.score_node(self.tape, self._raw(node_id), self.f_t, "container")
        child_ids = self._eval_children_ids(node)
        child_feats = [self._raw(c) for c in child_ids]
        f_new, child_out = self.model.message_pass(self.tape, self._start(node_id), child_feats)
        for cid, feat in zip(child_ids, child_out):
            self.carried[cid] = feat
        return self.model.score_node(self.tape, f_new, self.f_t, "container")

    def eval_objects(self, shelf_id: int, object_ids: list[int]) -> dict[int, float]:
        out = self.eval_objects_tensors(shelf_id, object_ids)
        return {oid: float(t.data.reshape(())) for oid, t in out.items()}

    def eval_objects_tensors(self, shelf_id: int, object_ids: list[int]) -> dict[int, nn.Tensor]:
        """Score detected objects from the shelf's message pass."""
        shelf = self.graph.node(shelf_id)
        if shelf.kind != NodeKind.SHELF:
            raise ModelError(f"node {shelf_id} is {shelf.kind.value}, expected shelf")
        key = (shelf_id, tuple(object_ids))
        cached = self._object_pass.get(key)
        if cached is not None:
            return cached
        if not self.model.arch.uses_message_passing():
            result = {oid: self.model.score_node(self.tape, self._raw(oid), self.f_t, "object")
                      for oid in object_ids}
        else:
            feats = [self._raw(oid) for oid in object_ids]
            _, child_out = self.model.message_pass(self.tape, self._start(shelf_id), feats)
            result = {}
            for oid, feat in zip(object_ids, child_out):
                self.carried[oid] = feat
                result[oid] = self.model.score_node(self.tape, feat, self.f_t, "object")
        self._object_pass[key] = result
        return result

    def eval_object_tensor(self, obj_id: int) -> nn.Tensor:
        """Score one visible object via its shelf's pass."""
        shelf_id = self.graph.parent_of(obj_id)
        vis = visible_objects(self.graph, shelf_id)
        if obj_id not in vis:
            raise IllegalActionError(f"object {obj_id} is not detectable")
        return self.eval_objects_tensors(shelf_id, vis)[obj_id]

    def eval_node_tensor(self, node_id: int) -> nn.Tensor:
        node = self.graph.node(node_id)
        if node.kind == NodeKind.OBJECT:
            return self.eval_object_tensor(node_id)
        return self.eval_container_tensor(node_id)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_model(path, model: Model) -> None:
    meta = {
        "kind": "model_checkpoint",
        "variant": model.arch.variant,
        "arch": model.arch.to_obj(),
        "arch_sha256": model.arch.arch_hash(),
        "embeddings_sha256": model.table.content_hash(),
    }
    nn.save_params(path, model.params, meta)


def load_model(path, table: EmbeddingTable) -> Model:
    params, meta = nn.load_params(path)
    if meta.get("kind") != "model_checkpoint":
        raise CheckpointError(f"{path} is not a model checkpoint")
    arch = ArchitectureSpec.from_obj(meta["arch"])
    if arch.arch_hash() != meta.get("arch_sha256"):
        raise CheckpointError("architecture hash mismatch in checkpoint")
    expected = {name: tuple(shape) for name, shape in arch.layer_specs()}
    actual = {name: tuple(t.data.shape) for name, t in params.params.items()}
    if expected != actual:
        raise CheckpointError("checkpoint parameters do not match the architecture spec")
    if meta.get("embeddings_sha256") != table.content_hash():
        raise CheckpointError(
            "checkpoint was trained with a different embedding table")
    return Model(arch, params, table)
