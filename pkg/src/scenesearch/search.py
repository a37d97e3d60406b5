"""Greedy depth-first search over a scene graph with adaptive score thresholds.

At every sibling list the policy scores the candidates, which are visited in
descending score order (ties by ascending node id).  A candidate scoring
below the list's threshold is skipped and the threshold drops to that score
for the rest of the list; thresholds are keyed by the parent node and
persist across restarts, which guarantees termination.  Entering a room,
opening a storage, looking at a shelf, and removing an object each cost one
action, including revisits after a restart.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .embeddings import EmbeddingTable, cosine_similarity, embed_phrase
from .model import GraphForward, Model
from .procgen import GenConfig, container_prior
from .scenegraph import (
    NodeKind,
    SceneGraph,
    TargetSpec,
    graph_hash,
    occluders_of,
    remove_object,
    visible_objects,
)

TRACE_FORMAT_VERSION = 1

DEFAULT_T0 = 0.1


class SearchError(Exception):
    pass


class PolicyRoleError(SearchError):
    """A policy was asked to score a node kind outside its role."""


class SearchGuardError(SearchError):
    """The quadratic action guard fired; the engine has a bug if this happens."""


class ReplayError(SearchError):
    pass


@dataclass
class Action:
    kind: str
    node: int
    score: float


@dataclass
class SearchTrace:
    actions: list[Action]
    restarts: int
    found: bool
    total_actions: int
    meta: dict = field(default_factory=dict)
    # (parent id, new threshold) per update, in order; in-memory only
    threshold_log: list[tuple[int, float]] = field(default_factory=list)


# ---------------------------------------------------------------------------
# Policies
# ---------------------------------------------------------------------------

class Policy:
    """A named scorer with container and/or object roles.

    ``bind`` produces a per-episode scorer so stateful policies (the model's
    carried vectors, the random stream) stay episode-local.
    """

    name = "policy"
    scores_containers = True
    scores_objects = True

    def bind(self, graph: SceneGraph, target: TargetSpec,
             rng: np.random.Generator,
             observe_all_shelves: bool = False) -> "BoundPolicy":
        raise NotImplementedError


class BoundPolicy:
    def __init__(self, policy: Policy, graph: SceneGraph, target: TargetSpec,
                 rng: np.random.Generator):
        self.policy = policy
        self.graph = graph
        self.target = target
        self.rng = rng

    def score_containers(self, parent_id: int, ids: list[int]) -> list[float]:
        if not self.policy.scores_containers:
            raise PolicyRoleError(f"policy {self.policy.name!r} cannot score containers")
        return self._containers(parent_id, ids)

    def score_objects(self, shelf_id: int, ids: list[int]) -> list[float]:
        if not self.policy.scores_objects:
            raise PolicyRoleError(f"policy {self.policy.name!r} cannot score objects")
        return self._objects(shelf_id, ids)

    def score_node(self, node_id: int) -> float:
        """Score one node in context (sibling context for object scorers)."""
        node = self.graph.node(node_id)
        if node.kind == NodeKind.OBJECT:
            shelf_id = self.graph.parent_of(node_id)
            vis = visible_objects(self.graph, shelf_id)
            if node_id not in vis:
                raise SearchError(f"object {node_id} is not detectable")
            return self.score_objects(shelf_id, vis)[vis.index(node_id)]
        parent = self.graph.parent_of(node_id) if node_id != self.graph.root else None
        return self.score_containers(parent, [node_id])[0]

    def _containers(self, parent_id, ids):
        raise NotImplementedError

    def _objects(self, shelf_id, ids):
        raise NotImplementedError


class _FunctionBound(BoundPolicy):
    """Bound policy delegating to per-node / per-list functions."""

    def _containers(self, parent_id, ids):
        return [self.policy.container_score(self, nid) for nid in ids]

    def _objects(self, shelf_id, ids):
        return self.policy.object_scores(self, shelf_id, ids)


class RandomPolicy(Policy):
    """Uniform draw in [0,1] per evaluation from the episode stream."""

    name = "random"

    def bind(self, graph, target, rng, observe_all_shelves=False):
        return _FunctionBound(self, graph, target, rng)

    def container_score(self, bound, node_id):
        return float(bound.rng.random())

    def object_scores(self, bound, shelf_id, ids):
        return [float(bound.rng.random()) for _ in ids]


class WordVecPolicy(Policy):
    """Cosine similarity of the node label and the target description,
    rescaled from [-1,1] to [0,1]."""

    name = "wordvec"

    def __init__(self, table: EmbeddingTable):
        self.table = table

    def bind(self, graph, target, rng, observe_all_shelves=False):
        bound = _FunctionBound(self, graph, target, rng)
        bound.target_vec = embed_phrase(self.table, target.description)
        return bound

    def _score(self, bound, node_id):
        label_vec = embed_phrase(self.table, bound.graph.node(node_id).label)
        return (cosine_similarity(label_vec, bound.target_vec) + 1.0) / 2.0

    def container_score(self, bound, node_id):
        return self._score(bound, node_id)

    def object_scores(self, bound, shelf_id, ids):
        return [self._score(bound, nid) for nid in ids]


class PriorPolicy(Policy):
    """Ground-truth category/container probability from the generation config."""

    name = "prior"
    scores_objects = False

    def __init__(self, config: GenConfig):
        self.config = config

    def bind(self, graph, target, rng, observe_all_shelves=False):
        return _FunctionBound(self, graph, target, rng)

    def container_score(self, bound, node_id):
        return container_prior(self.config, bound.graph, node_id, bound.target.category)


def _minmax(values: list[float]) -> list[float]:
    lo, hi = min(values), max(values)
    if hi == lo:
        return [1.0] * len(values)
    return [(v - lo) / (hi - lo) for v in values]


class NearestPolicy(Policy):
    """Depth rank per shelf: nearest object scores 1, farthest 0."""

    name = "nearest"
    scores_containers = False

    def bind(self, graph, target, rng, observe_all_shelves=False):
        return _FunctionBound(self, graph, target, rng)

    def object_scores(self, bound, shelf_id, ids):
        depths = [bound.graph.node(nid).placement.depth for nid in ids]
        return _minmax([-d for d in depths])


class LargestPolicy(Policy):
    """Front-view area rank per shelf: largest object scores 1, smallest 0."""

    name = "largest"
    scores_containers = False

    def bind(self, graph, target, rng, observe_all_shelves=False):
        return _FunctionBound(self, graph, target, rng)

    def object_scores(self, bound, shelf_id, ids):
        return _minmax([bound.graph.node(nid).placement.area() for nid in ids])


class OraclePolicy(Policy):
    """1 for containers whose subtree holds the target and for current
    occluders of the target, else 0."""

    name = "oracle"

    def bind(self, graph, target, rng, observe_all_shelves=False):
        return _FunctionBound(self, graph, target, rng)

    def container_score(self, bound, node_id):
        return 1.0 if bound.graph.subtree_contains(node_id, bound.target.object_id) else 0.0

    def object_scores(self, bound, shelf_id, ids):
        target_id = bound.target.object_id
        if bound.graph.parent_of(target_id) != shelf_id:
            return [0.0] * len(ids)
        occ = occluders_of(bound.graph, shelf_id, target_id)
        return [1.0 if nid in occ else 0.0 for nid in ids]


class _ModelBound(BoundPolicy):
    def __init__(self, policy, graph, target, rng, observe_all_shelves):
        super().__init__(policy, graph, target, rng)
        self.forward = GraphForward(policy.model, graph, target.description,
                                    observe_all_shelves=observe_all_shelves)

    def _containers(self, parent_id, ids):
        return [self.forward.eval_container(nid) for nid in ids]

    def _objects(self, shelf_id, ids):
        scores = self.forward.eval_objects(shelf_id, ids)
        return [scores[nid] for nid in ids]


class ModelPolicy(Policy):
    """Scores from a trained (or freshly initialized) message-passing model."""

    def __init__(self, model: Model, name: str = "model"):
        self.model = model
        self.name = name

    def bind(self, graph, target, rng, observe_all_shelves=False):
        return _ModelBound(self, graph, target, rng, observe_all_shelves)


POLICY_ROLES = {
    "oracle": ("container", "object"),
    "random": ("container", "object"),
    "wordvec": ("container", "object"),
    "prior": ("container",),
    "nearest": ("object",),
    "largest": ("object",),
    "model": ("container", "object"),
    "context": ("container", "object"),
}


def make_policy(name: str, *, table: EmbeddingTable | None = None,
                config: GenConfig | None = None, model: Model | None = None,
                cv_model: Model | None = None) -> Policy:
    """Construct a policy by canonical name, wiring its dependencies."""
    if name == "oracle":
        return OraclePolicy()
    if name == "random":
        return RandomPolicy()
    if name == "wordvec":
        if table is None:
            raise SearchError("wordvec policy needs an embedding table")
        return WordVecPolicy(table)
    if name == "prior":
        if config is None:
            raise SearchError("prior policy needs the generation config")
        return PriorPolicy(config)
    if name == "nearest":
        return NearestPolicy()
    if name == "largest":
        return LargestPolicy()
    if name == "model":
        if model is None:
            raise SearchError("model policy needs a checkpointed model")
        return ModelPolicy(model, name="model")
    if name == "context":
        if cv_model is None:
            raise SearchError("context policy needs a context-vector checkpoint")
        if cv_model.arch.variant != "context_vector":
            raise SearchError("context policy requires a context_vector-variant model")
        return ModelPolicy(cv_model, name="context")
    raise SearchError(f"unknown policy {name!r}")


# ---------------------------------------------------------------------------
# Episode engine
# ---------------------------------------------------------------------------

def search_episode(graph: SceneGraph, target: TargetSpec,
                   container_policy: Policy, object_policy: Policy,
                   t0: float = DEFAULT_T0,
                   rng: np.random.Generator | int = 0) -> SearchTrace:
    """Run one episode; the caller's graph is not mutated.

    Terminates with found=True for every policy pair; raises
    SearchGuardError if the action count ever exceeds (node count)^2 + 1.
    """
    if not (0.0 < t0 <= 1.0):
        raise SearchError(f"t0 must be in (0,1], got {t0}")
    if not container_policy.scores_containers:
        raise PolicyRoleError(
            f"policy {container_policy.name!r} cannot select containers")
    if not object_policy.scores_objects:
        raise PolicyRoleError(f"policy {object_policy.name!r} cannot select objects")

    seed = rng if isinstance(rng, int) else None
    rng = np.random.default_rng(rng) if isinstance(rng, int) else rng
    g = graph.copy()
    target_node = g.node(target.object_id)
    if target_node.kind != NodeKind.OBJECT or target_node.removed:
        raise SearchError(f"target {target.object_id} is not a present object")

    bound_c = container_policy.bind(g, target, rng)
    bound_o = bound_c if object_policy is container_policy else \
        object_policy.bind(g, target, rng)

    thresholds: dict[int, float] = {}
    threshold_log: list[tuple[int, float]] = []
    actions: list[Action] = []
    max_actions = len(g.nodes) ** 2 + 1

    def lower_threshold(parent_id: int, value: float) -> None:
        thresholds[parent_id] = value
        threshold_log.append((parent_id, value))

    def act(kind: str, node_id: int, score: float) -> None:
        if len(actions) >= max_actions:
            raise SearchGuardError(
                f"action guard exceeded ({max_actions}); search is not terminating")
        actions.append(Action(kind=kind, node=node_id, score=score))

    def object_phase(shelf_id: int) -> bool:
        while True:
            vis = visible_objects(g, shelf_id)
            if target.object_id in vis:
                return True
            if not vis:
                return False
            scores = bound_o.score_objects(shelf_id, vis)
            order = sorted(zip(vis, scores), key=lambda t: (-t[1], t[0]))
            removed_one = False
            for oid, p in order:
                threshold = thresholds.get(shelf_id, t0)
                if p < threshold:
                    lower_threshold(shelf_id, p)
                    continue
                remove_object(g, oid)
                act("remove_object", oid, p)
                removed_one = True
                break
            if not removed_one:
                return False

    def run_level(parent_id: int, child_ids: list[int], action_kind: str,
                  descend) -> bool:
        if not child_ids:
            return False
        scores = bound_c.score_containers(parent_id, child_ids)
        order = sorted(zip(child_ids, scores), key=lambda t: (-t[1], t[0]))
        for node_id, p in order:
            threshold = thresholds.get(parent_id, t0)
            if p < threshold:
                lower_threshold(parent_id, p)
                continue
            act(action_kind, node_id, p)
            g.node(node_id).explored = True
            if descend(node_id):
                return True
        return False

    def search_room(room_id: int) -> bool:
        return run_level(room_id, g.children_of(room_id), "open_storage", search_storage)

    def search_storage(storage_id: int) -> bool:
        return run_level(storage_id, g.children_of(storage_id), "look_shelf", object_phase)

    found = False
    passes = 0
    while not found:
        passes += 1
        found = run_level(g.root, g.children_of(g.root), "enter_room", search_room)

    meta = {
        "format_version": TRACE_FORMAT_VERSION,
        "graph_sha256": graph_hash(graph),
        "target_object": target.object_id,
        "target_description": target.description,
        "container_policy": container_policy.name,
        "object_policy": object_policy.name,
        "t0": t0,
        "seed": seed,
    }
    return SearchTrace(actions=actions, restarts=passes - 1, found=found,
                       total_actions=len(actions), meta=meta,
                       threshold_log=threshold_log)


def _seen(graph: SceneGraph, target_id: int) -> bool:
    shelf_id = graph.parent_of(target_id)
    return graph.node(shelf_id).explored and target_id in visible_objects(graph, shelf_id)


def replay_trace(graph: SceneGraph, trace: SearchTrace, strict: bool = False) -> bool:
    """Re-execute a trace on a fresh graph copy, verifying every step.

    Returns True iff every action was legal in sequence and the found
    outcome matches; with ``strict`` an inconsistency raises ReplayError
    describing the step.
    """
    def fail(msg: str) -> bool:
        if strict:
            raise ReplayError(msg)
        return False

    g = graph.copy()
    target_id = trace.meta.get("target_object")
    if target_id is None:
        return fail("trace has no target in its metadata")
    if trace.total_actions != len(trace.actions):
        return fail("total_actions does not match the action list")
    entered: set[int] = set()
    opened: set[int] = set()
    looked: set[int] = set()
    for i, action in enumerate(trace.actions):
        try:
            node = g.node(action.node)
        except Exception:
            return fail(f"step {i}: unknown node {action.node}")
        if action.kind == "enter_room":
            if node.kind != NodeKind.ROOM:
                return fail(f"step {i}: enter_room on a {node.kind.value}")
            entered.add(node.id)
        elif action.kind == "open_storage":
            if node.kind != NodeKind.STORAGE:
                return fail(f"step {i}: open_storage on a {node.kind.value}")
            if g.parent_of(node.id) not in entered:
                return fail(f"step {i}: storage {node.id} opened before entering its room")
            opened.add(node.id)
        elif action.kind == "look_shelf":
            if node.kind != NodeKind.SHELF:
                return fail(f"step {i}: look_shelf on a {node.kind.value}")
            if g.parent_of(node.id) not in opened:
                return fail(f"step {i}: shelf {node.id} inspected before opening its storage")
            node.explored = True
            looked.add(node.id)
        elif action.kind == "remove_object":
            if node.kind != NodeKind.OBJECT:
                return fail(f"step {i}: remove_object on a {node.kind.value}")
            shelf_id = g.parent_of(node.id)
            if shelf_id not in looked:
                return fail(f"step {i}: removal from an uninspected shelf")
            if node.removed or node.id not in visible_objects(g, shelf_id):
                return fail(f"step {i}: object {node.id} is not removable (hidden or gone)")
            remove_object(g, node.id)
        else:
            return fail(f"step {i}: unknown action kind {action.kind!r}")
        if _seen(g, target_id) and i < len(trace.actions) - 1:
            return fail(f"step {i}: target already visible but the trace continues")
    if _seen(g, target_id) != trace.found:
        return fail("found flag does not match the replayed outcome")
    return True


# ---------------------------------------------------------------------------
# Trace files (JSON lines: header then one action per line)
# ---------------------------------------------------------------------------

def write_trace(path, trace: SearchTrace) -> None:
    header = dict(trace.meta)
    header.update({"restarts": trace.restarts, "found": trace.found,
                   "total_actions": trace.total_actions})
    lines = [json.dumps(header, separators=(",", ":"))]
    for a in trace.actions:
        lines.append(json.dumps({"kind": a.kind, "node": a.node, "score": a.score},
                                separators=(",", ":")))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_trace(path) -> SearchTrace:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [line for line in fh.read().splitlines() if line]
    if not lines:
        raise SearchError(f"trace file {path} is empty")
    header = json.loads(lines[0])
    version = header.get("format_version")
    if version != TRACE_FORMAT_VERSION:
        raise SearchError(f"unsupported trace format version {version!r}")
    actions = [Action(**json.loads(line)) for line in lines[1:]]
    meta = {k: v for k, v in header.items()
            if k not in ("restarts", "found", "total_actions")}
    return SearchTrace(actions=actions, restarts=header["restarts"],
                       found=header["found"], total_actions=header["total_actions"],
                       meta=meta)
