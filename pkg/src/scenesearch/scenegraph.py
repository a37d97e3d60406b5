"""Scene-graph data model, front-projection occlusion geometry, and mutation.

A graph is a strict house -> room -> storage -> shelf -> object hierarchy.
Objects carry a 2D front-view placement (normalized rectangle plus a depth
value); everything the simulated detector reports is derived from those
rectangles by depth-ordered area coverage.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import Enum
from hashlib import sha256
from typing import Iterator

GRAPH_FORMAT_VERSION = 1

# Minimum unoccluded area fraction for the detector to report an object.
VISIBLE_FRACTION = 0.7


class GraphError(Exception):
    """Base class for scene-graph errors."""


class UnknownNodeError(GraphError):
    def __init__(self, node_id):
        super().__init__(f"unknown node id {node_id!r}")
        self.node_id = node_id


class KindError(GraphError):
    """A node has the wrong kind for the requested operation."""


class IllegalActionError(GraphError):
    """A mutation that the agent is not allowed to perform."""


class GraphParseError(GraphError):
    """Malformed serialized graph; carries the offending position."""

    def __init__(self, message: str, position: int = 0):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class NodeKind(str, Enum):
    HOUSE = "house"
    ROOM = "room"
    STORAGE = "storage"
    SHELF = "shelf"
    OBJECT = "object"


# Allowed child kind on every edge of the hierarchy.
CHILD_KIND = {
    NodeKind.HOUSE: NodeKind.ROOM,
    NodeKind.ROOM: NodeKind.STORAGE,
    NodeKind.STORAGE: NodeKind.SHELF,
    NodeKind.SHELF: NodeKind.OBJECT,
}

CONTAINER_KINDS = (NodeKind.HOUSE, NodeKind.ROOM, NodeKind.STORAGE, NodeKind.SHELF)


@dataclass
class Placement:
    """Normalized front-view rectangle of an object on its shelf.

    ``cx, cy`` is the rectangle center, ``w, h`` its extents, all in shelf
    front-view coordinates ([0,1] square).  ``depth`` orders objects front
    (0.0) to back (1.0); only strictly nearer siblings can occlude.
    """

    cx: float
    cy: float
    w: float
    h: float
    depth: float
    category: str

    def rect(self) -> tuple[float, float, float, float]:
        return (self.cx - self.w / 2, self.cy - self.h / 2,
                self.cx + self.w / 2, self.cy + self.h / 2)

    def area(self) -> float:
        return self.w * self.h

    def validate(self) -> None:
        if not (0 < self.w <= 1 and 0 < self.h <= 1):
            raise GraphError(f"placement extents out of (0,1]: w={self.w} h={self.h}")
        x0, y0, x1, y1 = self.rect()
        eps = 1e-9
        if x0 < -eps or y0 < -eps or x1 > 1 + eps or y1 > 1 + eps:
            raise GraphError(f"placement rectangle outside the unit square: {self.rect()}")
        if not (0 <= self.depth <= 1):
            raise GraphError(f"placement depth out of [0,1]: {self.depth}")


@dataclass
class SceneNode:
    id: int
    kind: NodeKind
    label: str
    description: str = ""
    volume: float = 0.0
    placement: Placement | None = None
    children: list[int] = field(default_factory=list)
    explored: bool = False
    removed: bool = False


@dataclass
class TargetSpec:
    """Identity of the hidden object an episode searches for."""

    object_id: int
    description: str
    category: str


class SceneGraph:
    """Rooted tree of scene nodes with insertion-order integer ids."""

    def __init__(self, house_label: str = "house"):
        root = SceneNode(id=0, kind=NodeKind.HOUSE, label=house_label)
        self.nodes: dict[int, SceneNode] = {0: root}
        self.root: int = 0
        self._parent: dict[int, int] = {}

    def node(self, node_id: int) -> SceneNode:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise UnknownNodeError(node_id) from None

    def parent_of(self, node_id: int) -> int:
        self.node(node_id)
        if node_id == self.root:
            raise GraphError("root node has no parent")
        return self._parent[node_id]

    def add_child(self, parent_id: int, kind: NodeKind, label: str, *,
                  description: str = "", volume: float = 0.0,
                  placement: Placement | None = None) -> int:
        parent = self.node(parent_id)
        expected = CHILD_KIND.get(parent.kind)
        if expected is None or kind != expected:
            raise KindError(f"{kind.value} cannot be a child of {parent.kind.value}")
        if not label:
            raise GraphError("node label must be nonempty")
        if kind == NodeKind.OBJECT:
            if placement is None:
                raise GraphError("object node requires a placement")
            if not description:
                raise GraphError("object description must be nonempty")
            placement.validate()
        elif placement is not None:
            raise GraphError("only object nodes carry a placement")
        if volume and kind != NodeKind.STORAGE:
            raise GraphError("only storage nodes carry a volume")
        node_id = len(self.nodes)
        node = SceneNode(id=node_id, kind=kind, label=label, description=description,
                         volume=volume, placement=placement)
        self.nodes[node_id] = node
        parent.children.append(node_id)
        self._parent[node_id] = parent_id
        return node_id

    def children_of(self, node_id: int) -> list[int]:
        return list(self.node(node_id).children)

    def iter_kind(self, kind: NodeKind) -> Iterator[SceneNode]:
        for node in self.nodes.values():
            if node.kind == kind:
                yield node

    def ancestors(self, node_id: int) -> list[int]:
        """Path from the node's parent up to (excluding) the root."""
        out = []
        cur = node_id
        while cur != self.root:
            cur = self.parent_of(cur)
            if cur != self.root:
                out.append(cur)
        return out

    def subtree_contains(self, container_id: int, node_id: int) -> bool:
        cur = node_id
        while cur != self.root:
            cur = self.parent_of(cur)
            if cur == container_id:
                return True
        return container_id == self.root

    def validate(self) -> None:
        """Check the tree and kind invariants; raises GraphError on violation."""
        seen = set()
        stack = [self.root]
        while stack:
            nid = stack.pop()
            if nid in seen:
                raise GraphError(f"node {nid} reachable twice (not a tree)")
            seen.add(nid)
            node = self.node(nid)
            for cid in node.children:
                child = self.node(cid)
                if child.kind != CHILD_KIND.get(node.kind):
                    raise KindError(
                        f"edge {node.kind.value}->{child.kind.value} violates the hierarchy")
                if self._parent.get(cid) != nid:
                    raise GraphError(f"node {cid} has inconsistent parent")
                stack.append(cid)
        if seen != set(self.nodes):
            raise GraphError("unreachable nodes present")
        for node in self.nodes.values():
            if node.kind == NodeKind.OBJECT:
                if node.placement is None:
                    raise GraphError(f"object {node.id} lacks a placement")
                node.placement.validate()
                if not node.description:
                    raise GraphError(f"object {node.id} lacks a description")

    def copy(self) -> "SceneGraph":
        g = SceneGraph.__new__(SceneGraph)
        g.root = self.root
        g.nodes = {}
        for nid, node in self.nodes.items():
            placement = replace(node.placement) if node.placement else None
            g.nodes[nid] = replace(node, placement=placement, children=list(node.children))
        g._parent = dict(self._parent)
        return g

    def __eq__(self, other) -> bool:
        if not isinstance(other, SceneGraph):
            return NotImplemented
        return self.root == other.root and self.nodes == other.nodes

    def __repr__(self) -> str:
        return f"SceneGraph({len(self.nodes)} nodes)"


# ---------------------------------------------------------------------------
# Occlusion geometry
# ---------------------------------------------------------------------------

def _clip(rect, box):
    x0 = max(rect[0], box[0])
    y0 = max(rect[1], box[1])
    x1 = min(rect[2], box[2])
    y1 = min(rect[3], box[3])
    if x1 <= x0 or y1 <= y0:
        return None
    return (x0, y0, x1, y1)


def _covered_area(box, rects) -> float:
    """Exact area of ``union(rects) & box`` by coordinate-grid decomposition."""
    clipped = [c for r in rects if (c := _clip(r, box)) is not None]
    if not clipped:
        return 0.0
    xs = sorted({box[0], box[2], *(r[0] for r in clipped), *(r[2] for r in clipped)})
    ys = sorted({box[1], box[3], *(r[1] for r in clipped), *(r[3] for r in clipped)})
    total = 0.0
    for i in range(len(xs) - 1):
        cx = (xs[i] + xs[i + 1]) / 2
        for j in range(len(ys) - 1):
            cy = (ys[j] + ys[j + 1]) / 2
            for r in clipped:
                if r[0] <= cx <= r[2] and r[1] <= cy <= r[3]:
                    total += (xs[i + 1] - xs[i]) * (ys[j + 1] - ys[j])
                    break
    return total


def _check_shelf_object(graph: SceneGraph, shelf_id: int, obj_id: int) -> SceneNode:
    shelf = graph.node(shelf_id)
    if shelf.kind != NodeKind.SHELF:
        raise KindError(f"node {shelf_id} is {shelf.kind.value}, expected shelf")
    obj = graph.node(obj_id)
    if obj.kind != NodeKind.OBJECT:
        raise KindError(f"node {obj_id} is {obj.kind.value}, expected object")
    if obj_id not in shelf.children:
        raise GraphError(f"object {obj_id} is not on shelf {shelf_id}")
    if obj.removed:
        raise IllegalActionError(f"object {obj_id} was already removed")
    return obj


def occlusion_fraction(graph: SceneGraph, shelf_id: int, obj_id: int) -> float:
    """Fraction of the object's rectangle covered by strictly nearer siblings.

    Removed siblings do not occlude.  Computed in closed form.
    """
    obj = _check_shelf_object(graph, shelf_id, obj_id)
    assert obj.placement is not None
    nearer = []
    for sid in graph.node(shelf_id).children:
        if sid == obj_id:
            continue
        sib = graph.node(sid)
        if sib.removed:
            continue
        if sib.placement.depth < obj.placement.depth:
            nearer.append(sib.placement.rect())
    box = obj.placement.rect()
    covered = _covered_area(box, nearer)
    # same corner arithmetic as the grid cells, so full cover is exactly 1.0
    area = (box[2] - box[0]) * (box[3] - box[1])
    return min(1.0, covered / area)


def visible_objects(graph: SceneGraph, shelf_id: int,
                    visible_fraction: float = VISIBLE_FRACTION) -> list[int]:
    """Non-removed children the detector reports, sorted by node id.

    An object is detected when its unoccluded area fraction is at least
    ``visible_fraction``.  The detector exposes label and placement only,
    never the text description.
    """
    shelf = graph.node(shelf_id)
    if shelf.kind != NodeKind.SHELF:
        raise KindError(f"node {shelf_id} is {shelf.kind.value}, expected shelf")
    out = []
    for oid in shelf.children:
        if graph.node(oid).removed:
            continue
        if occlusion_fraction(graph, shelf_id, oid) <= 1.0 - visible_fraction:
            out.append(oid)
    return sorted(out)


def is_hidden(graph: SceneGraph, obj_id: int,
              visible_fraction: float = VISIBLE_FRACTION) -> bool:
    """True when a non-removed object is below the detection threshold."""
    obj = graph.node(obj_id)
    if obj.kind != NodeKind.OBJECT:
        raise KindError(f"node {obj_id} is {obj.kind.value}, expected object")
    if obj.removed:
        raise IllegalActionError(f"object {obj_id} was removed")
    shelf_id = graph.parent_of(obj_id)
    return occlusion_fraction(graph, shelf_id, obj_id) > 1.0 - visible_fraction


def occluders_of(graph: SceneGraph, shelf_id: int, target_id: int) -> set[int]:
    """Non-removed siblings strictly nearer than the target that overlap it."""
    target = _check_shelf_object(graph, shelf_id, target_id)
    assert target.placement is not None
    box = target.placement.rect()
    out = set()
    for sid in graph.node(shelf_id).children:
        if sid == target_id:
            continue
        sib = graph.node(sid)
        if sib.removed or sib.placement.depth >= target.placement.depth:
            continue
        if _clip(sib.placement.rect(), box) is not None:
            out.add(sid)
    return out


def remove_object(graph: SceneGraph, obj_id: int,
                  visible_fraction: float = VISIBLE_FRACTION) -> list[int]:
    """Remove a currently visible object; returns siblings that became visible.

    Removing a hidden or already-removed object is an illegal agent action.
    """
    obj = graph.node(obj_id)
    if obj.kind != NodeKind.OBJECT:
        raise KindError(f"node {obj_id} is {obj.kind.value}, expected object")
    if obj.removed:
        raise IllegalActionError(f"object {obj_id} was already removed")
    shelf_id = graph.parent_of(obj_id)
    before = set(visible_objects(graph, shelf_id, visible_fraction))
    if obj_id not in before:
        raise IllegalActionError(f"object {obj_id} is hidden and cannot be removed")
    obj.removed = True
    after = visible_objects(graph, shelf_id, visible_fraction)
    return sorted(set(after) - before)


# ---------------------------------------------------------------------------
# Serialization (one canonical JSON object per graph, stable byte-for-byte)
# ---------------------------------------------------------------------------

def _placement_to_obj(p: Placement | None):
    if p is None:
        return None
    return {"cx": p.cx, "cy": p.cy, "w": p.w, "h": p.h,
            "depth": p.depth, "category": p.category}


def serialize_graph(graph: SceneGraph) -> str:
    """Canonical single-line JSON record; equal graphs serialize identically."""
    nodes = []
    for nid in sorted(graph.nodes):
        n = graph.nodes[nid]
        nodes.append({
            "id": n.id,
            "kind": n.kind.value,
            "label": n.label,
            "description": n.description,
            "volume": n.volume,
            "placement": _placement_to_obj(n.placement),
            "children": list(n.children),
            "explored": n.explored,
            "removed": n.removed,
        })
    record = {"version": GRAPH_FORMAT_VERSION, "root": graph.root, "nodes": nodes}
    return json.dumps(record, separators=(",", ":"))


def deserialize_graph(text: str) -> SceneGraph:
    try:
        record = json.loads(text)
    except json.JSONDecodeError as exc:
        raise GraphParseError(f"invalid JSON: {exc.msg}", exc.pos) from None
    if not isinstance(record, dict):
        raise GraphParseError("graph record must be a JSON object")
    version = record.get("version")
    if version != GRAPH_FORMAT_VERSION:
        raise GraphParseError(f"unsupported graph format version {version!r}")
    nodes = record.get("nodes")
    if not isinstance(nodes, list) or "root" not in record:
        raise GraphParseError("graph record needs 'root' and a 'nodes' array")

    graph = SceneGraph.__new__(SceneGraph)
    graph.nodes = {}
    graph.root = record["root"]
    graph._parent = {}
    for idx, obj in enumerate(nodes):
        try:
            placement = None
            if obj["placement"] is not None:
                p = obj["placement"]
                placement = Placement(cx=float(p["cx"]), cy=float(p["cy"]),
                                      w=float(p["w"]), h=float(p["h"]),
                                      depth=float(p["depth"]), category=p["category"])
            node = SceneNode(
                id=int(obj["id"]),
                kind=NodeKind(obj["kind"]),
                label=obj["label"],
                description=obj["description"],
                volume=float(obj["volume"]),
                placement=placement,
                children=[int(c) for c in obj["children"]],
                explored=bool(obj["explored"]),
                removed=bool(obj["removed"]),
            )
        except (KeyError, ValueError, TypeError) as exc:
            raise GraphParseError(f"bad node entry #{idx}: {exc}", idx) from None
        if node.id in graph.nodes:
            raise GraphParseError(f"duplicate node id {node.id}", idx)
        graph.nodes[node.id] = node
    for node in graph.nodes.values():
        for cid in node.children:
            if cid not in graph.nodes:
                raise GraphParseError(f"child {cid} of node {node.id} does not exist")
            graph._parent[cid] = node.id
    try:
        graph.validate()
    except GraphError as exc:
        raise GraphParseError(f"invalid graph structure: {exc}") from None
    return graph


def graph_hash(graph: SceneGraph) -> str:
    return sha256(serialize_graph(graph).encode("utf-8")).hexdigest()
