import numpy as np
import pytest

from scenesearch.cli import default_embeddings_path
from scenesearch.embeddings import load_embeddings
from scenesearch.scenegraph import NodeKind, Placement, SceneGraph


@pytest.fixture(scope="session")
def table():
    return load_embeddings(default_embeddings_path())


def build_shelf_graph(objects, room_label="kitchen", storage_label="fridge",
                      volume=500.0):
    """House -> one room -> one storage -> one shelf holding ``objects``.

    Each object is (cx, cy, w, h, depth) or (cx, cy, w, h, depth, label).
    Returns (graph, shelf_id, [object ids in order]).
    """
    g = SceneGraph()
    room = g.add_child(g.root, NodeKind.ROOM, room_label)
    storage = g.add_child(room, NodeKind.STORAGE, storage_label, volume=volume)
    shelf = g.add_child(storage, NodeKind.SHELF, "shelf")
    ids = []
    for i, spec in enumerate(objects):
        cx, cy, w, h, depth = spec[:5]
        label = spec[5] if len(spec) > 5 else "dairy"
        placement = Placement(cx=cx, cy=cy, w=w, h=h, depth=depth, category=label)
        ids.append(g.add_child(shelf, NodeKind.OBJECT, label,
                               description=f"test {label} {i}", placement=placement))
    return g, shelf, ids


def mc_occlusion(graph, shelf_id, obj_id, n=100_000, seed=0):
    """Monte Carlo pixel oracle for the occlusion fraction."""
    rng = np.random.default_rng(seed)
    obj = graph.node(obj_id)
    x0, y0, x1, y1 = obj.placement.rect()
    xs = rng.uniform(x0, x1, size=n)
    ys = rng.uniform(y0, y1, size=n)
    covered = np.zeros(n, dtype=bool)
    for sid in graph.node(shelf_id).children:
        if sid == obj_id:
            continue
        sib = graph.node(sid)
        if sib.removed or sib.placement.depth >= obj.placement.depth:
            continue
        sx0, sy0, sx1, sy1 = sib.placement.rect()
        covered |= (xs >= sx0) & (xs <= sx1) & (ys >= sy0) & (ys <= sy1)
    return float(covered.mean())
