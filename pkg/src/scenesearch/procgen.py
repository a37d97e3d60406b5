"""Procedural generation of plausible indoor scene graphs.

Layout sampling is table-driven: each storage type lands in exactly one room
drawn from its room distribution, categories enter a storage instance as
independent Bernoulli draws on the category/storage table (so the table value
is the ground-truth presence probability used by the prior baseline), and
present categories are dealt across the shelves.  Object placement uses five
discrete depth bands with same-band disjointness, which densely packs
semantically related objects and routinely hides some of them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from hashlib import sha256
from pathlib import Path

import numpy as np

from .scenegraph import (
    NodeKind,
    Placement,
    SceneGraph,
    TargetSpec,
    serialize_graph,
    deserialize_graph,
    visible_objects,
)

DATASET_FORMAT_VERSION = 1
CONFIG_FORMAT_VERSION = 1

DEPTH_BANDS = (0.0, 0.25, 0.5, 0.75, 1.0)
PLACE_RETRIES = 200


class GenError(Exception):
    pass


class PlacementError(GenError):
    pass


class NoEligibleTargetError(GenError):
    pass


@dataclass
class AssetSpec:
    name: str
    description: str
    category: str
    w: float
    h: float
    held_out: bool = False


@dataclass
class GenConfig:
    """Probability tables and asset catalog driving generation."""

    room_types: list[str]
    storage_types: list[str]
    storage_room_prob: dict[str, dict[str, float]]
    category_storage_prob: dict[str, dict[str, float]]
    assets: list[AssetSpec]
    shelf_count_range: dict[str, tuple[int, int]]
    storage_volume_range: dict[str, tuple[float, float]]
    objects_per_shelf_range: tuple[int, int] = (4, 15)
    categories_per_shelf_range: tuple[int, int] = (1, 2)
    seed: int = 0

    def categories(self) -> list[str]:
        return list(self.category_storage_prob)

    def assets_by_category(self) -> dict[str, list[AssetSpec]]:
        out: dict[str, list[AssetSpec]] = {}
        for a in self.assets:
            out.setdefault(a.category, []).append(a)
        return out

    def asset_by_description(self) -> dict[str, AssetSpec]:
        return {a.description: a for a in self.assets}

    def validate(self) -> None:
        if not self.room_types or not self.storage_types:
            raise GenError("room and storage type lists must be nonempty")
        for stype in self.storage_types:
            row = self.storage_room_prob.get(stype, {})
            if any(not (0 <= p <= 1) for p in row.values()):
                raise GenError(f"storage_room_prob[{stype}] has values outside [0,1]")
            if not any(row.get(r, 0.0) > 0 for r in self.room_types):
                raise GenError(f"storage type {stype!r} has no room with positive probability")
            if stype not in self.shelf_count_range or stype not in self.storage_volume_range:
                raise GenError(f"storage type {stype!r} lacks shelf count or volume range")
        for cat, row in self.category_storage_prob.items():
            if any(not (0 <= p <= 1) for p in row.values()):
                raise GenError(f"category_storage_prob[{cat}] has values outside [0,1]")
            if not any(row.get(s, 0.0) > 0 for s in self.storage_types):
                raise GenError(f"category {cat!r} has no storage type with positive probability")
        for lo, hi in (self.objects_per_shelf_range, self.categories_per_shelf_range):
            if lo < 1 or hi < lo:
                raise GenError("per-shelf ranges must satisfy 1 <= lo <= hi")
        names = [a.name for a in self.assets]
        if len(set(names)) != len(names):
            raise GenError("asset names must be unique")
        descriptions = [a.description for a in self.assets]
        if len(set(descriptions)) != len(descriptions):
            raise GenError("asset descriptions must be unique")
        by_cat = self.assets_by_category()
        for cat in by_cat:
            if cat not in self.category_storage_prob:
                raise GenError(f"asset category {cat!r} missing from category_storage_prob")
        held = {cat: sum(1 for a in assets if a.held_out) for cat, assets in by_cat.items()}
        if any(held.values()) and any(n != 1 for n in held.values()):
            raise GenError("test-enabled catalogs need exactly one held-out asset per category")

    def to_obj(self) -> dict:
        return {
            "format_version": CONFIG_FORMAT_VERSION,
            "room_types": list(self.room_types),
            "storage_types": list(self.storage_types),
            "storage_room_prob": {s: dict(r) for s, r in self.storage_room_prob.items()},
            "category_storage_prob": {c: dict(r) for c, r in self.category_storage_prob.items()},
            "assets": [{"name": a.name, "description": a.description, "category": a.category,
                        "w": a.w, "h": a.h, "held_out": a.held_out} for a in self.assets],
            "shelf_count_range": {s: list(r) for s, r in self.shelf_count_range.items()},
            "storage_volume_range": {s: list(r) for s, r in self.storage_volume_range.items()},
            "objects_per_shelf_range": list(self.objects_per_shelf_range),
            "categories_per_shelf_range": list(self.categories_per_shelf_range),
            "seed": self.seed,
        }

    @classmethod
    def from_obj(cls, obj: dict) -> "GenConfig":
        version = obj.get("format_version")
        if version != CONFIG_FORMAT_VERSION:
            raise GenError(f"unsupported config format version {version!r}")
        cfg = cls(
            room_types=list(obj["room_types"]),
            storage_types=list(obj["storage_types"]),
            storage_room_prob={s: dict(r) for s, r in obj["storage_room_prob"].items()},
            category_storage_prob={c: dict(r) for c, r in obj["category_storage_prob"].items()},
            assets=[AssetSpec(**a) for a in obj["assets"]],
            shelf_count_range={s: (int(r[0]), int(r[1]))
                               for s, r in obj["shelf_count_range"].items()},
            storage_volume_range={s: (float(r[0]), float(r[1]))
                                  for s, r in obj["storage_volume_range"].items()},
            objects_per_shelf_range=tuple(obj["objects_per_shelf_range"]),
            categories_per_shelf_range=tuple(obj["categories_per_shelf_range"]),
            seed=int(obj["seed"]),
        )
        cfg.validate()
        return cfg

    def config_hash(self) -> str:
        return sha256(json.dumps(self.to_obj(), separators=(",", ":")).encode()).hexdigest()


def save_config(path, config: GenConfig) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config.to_obj(), fh, indent=2)
        fh.write("\n")


def load_config(path) -> GenConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return GenConfig.from_obj(json.load(fh))


# ---------------------------------------------------------------------------
# Default catalog and tables
# ---------------------------------------------------------------------------

DEFAULT_ROOMS = ["kitchen", "living room", "bedroom", "bathroom", "closet",
                 "garage", "office"]
DEFAULT_STORAGE = ["fridge", "cabinet", "shelves", "pantry"]

_STORAGE_ROOM = {
    "fridge":  {"kitchen": 0.78, "garage": 0.12, "office": 0.03, "living room": 0.03,
                "bedroom": 0.02, "closet": 0.01, "bathroom": 0.01},
    "cabinet": {"kitchen": 0.30, "bathroom": 0.24, "living room": 0.14, "bedroom": 0.12,
                "office": 0.10, "closet": 0.06, "garage": 0.04},
    "shelves": {"living room": 0.24, "office": 0.22, "garage": 0.18, "bedroom": 0.14,
                "closet": 0.12, "kitchen": 0.06, "bathroom": 0.04},
    "pantry":  {"kitchen": 0.68, "closet": 0.14, "garage": 0.10, "living room": 0.03,
                "office": 0.03, "bedroom": 0.01, "bathroom": 0.01},
}

# category -> (fridge, cabinet, shelves, pantry) presence probabilities
_CATEGORY_STORAGE = {
    "dairy":    (0.85, 0.02, 0.00, 0.08),
    "veggie":   (0.75, 0.02, 0.00, 0.10),
    "fruit":    (0.55, 0.05, 0.02, 0.15),
    "meat":     (0.70, 0.00, 0.00, 0.02),
    "seafood":  (0.45, 0.00, 0.00, 0.02),
    "juice":    (0.40, 0.05, 0.02, 0.20),
    "soda":     (0.35, 0.08, 0.05, 0.25),
    "sauce":    (0.20, 0.15, 0.02, 0.40),
    "bread":    (0.05, 0.20, 0.05, 0.45),
    "cereal":   (0.00, 0.18, 0.05, 0.50),
    "pasta":    (0.00, 0.15, 0.03, 0.45),
    "soup":     (0.02, 0.12, 0.02, 0.35),
    "spice":    (0.00, 0.30, 0.03, 0.40),
    "coffee":   (0.02, 0.25, 0.05, 0.30),
    "tea":      (0.02, 0.25, 0.05, 0.28),
    "candy":    (0.02, 0.15, 0.08, 0.25),
    "snack":    (0.02, 0.15, 0.10, 0.35),
    "vitamin":  (0.02, 0.30, 0.08, 0.10),
    "medicine": (0.02, 0.35, 0.06, 0.05),
    "shampoo":  (0.00, 0.30, 0.08, 0.02),
    "soap":     (0.00, 0.30, 0.08, 0.04),
    "lotion":   (0.00, 0.28, 0.08, 0.02),
    "toy":      (0.00, 0.05, 0.40, 0.02),
    "game":     (0.00, 0.04, 0.40, 0.00),
    "book":     (0.00, 0.05, 0.55, 0.00),
    "hat":      (0.00, 0.08, 0.35, 0.00),
}

_ADJECTIVES = ["handmade", "fresh", "aged", "organic", "vintage", "classic",
               "deluxe", "mini", "jumbo", "golden"]
_COLORS = ["brown", "red", "blue", "green", "white", "black", "yellow", "purple"]

ASSETS_PER_CATEGORY = 6


def default_assets() -> list[AssetSpec]:
    """26 categories x 6 assets with deterministic sizes and descriptions."""
    rng = np.random.default_rng(20240)
    assets = []
    for ci, category in enumerate(_CATEGORY_STORAGE):
        for i in range(ASSETS_PER_CATEGORY):
            adj = _ADJECTIVES[(ci + i) % len(_ADJECTIVES)]
            color = _COLORS[(2 * ci + 3 * i) % len(_COLORS)]
            description = f"{adj} {color} {category}".title()
            # Up to 15 instances per shelf must fit 5 depth bands of unit
            # width, so the catalog keeps widths comfortably below 1/5.
            w = round(float(rng.uniform(0.08, 0.20)), 3)
            h = round(float(rng.uniform(0.12, 0.40)), 3)
            assets.append(AssetSpec(name=f"{category}_{i:02d}", description=description,
                                    category=category, w=w, h=h, held_out=(i == 0)))
    return assets


def default_config(split: str = "train") -> GenConfig:
    """Shipped default configuration; the test split perturbs every table
    probability by up to +/-10% (renormalized where rows are distributions)."""
    if split not in ("train", "test"):
        raise GenError(f"unknown split {split!r}")
    storage_room = {s: dict(row) for s, row in _STORAGE_ROOM.items()}
    category_storage = {
        cat: dict(zip(DEFAULT_STORAGE, probs)) for cat, probs in _CATEGORY_STORAGE.items()
    }
    if split == "test":
        rng = np.random.default_rng(777)
        for row in storage_room.values():
            for room in row:
                row[room] *= 1.0 + 0.1 * float(rng.uniform(-1, 1))
            total = sum(row.values())
            for room in row:
                row[room] = round(row[room] / total, 6)
        for row in category_storage.values():
            for stype in row:
                p = row[stype] * (1.0 + 0.1 * float(rng.uniform(-1, 1)))
                row[stype] = round(min(max(p, 0.0), 1.0), 6)
    cfg = GenConfig(
        room_types=list(DEFAULT_ROOMS),
        storage_types=list(DEFAULT_STORAGE),
        storage_room_prob=storage_room,
        category_storage_prob=category_storage,
        assets=default_assets(),
        shelf_count_range={s: (4, 6) for s in DEFAULT_STORAGE},
        storage_volume_range={"fridge": (450.0, 800.0), "cabinet": (150.0, 450.0),
                              "shelves": (250.0, 600.0), "pantry": (500.0, 1000.0)},
        seed=0,
    )
    cfg.validate()
    return cfg


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------

def _rects_overlap(a, b) -> bool:
    return a[0] < b[2] and b[0] < a[2] and a[1] < b[3] and b[1] < a[3]


def place_objects(instances: list[AssetSpec], rng: np.random.Generator,
                  max_retries: int = PLACE_RETRIES) -> list[Placement]:
    """Place instances in depth bands; same-band rectangles must be disjoint.

    Every instance draws a band and a horizontal center uniformly, resting on
    the shelf floor (cy = h/2), and redraws both on collision.
    """
    placements: list[Placement] = []
    for inst in instances:
        if not (0 < inst.w <= 1 and 0 < inst.h <= 1):
            raise PlacementError(f"asset {inst.name!r} does not fit the unit front view")
        placed = None
        for _ in range(max_retries):
            depth = DEPTH_BANDS[int(rng.integers(0, len(DEPTH_BANDS)))]
            cx = inst.w / 2 + float(rng.random()) * (1.0 - inst.w)
            cand = Placement(cx=cx, cy=inst.h / 2, w=inst.w, h=inst.h,
                             depth=depth, category=inst.category)
            rect = cand.rect()
            if any(p.depth == depth and _rects_overlap(rect, p.rect()) for p in placements):
                continue
            placed = cand
            break
        if placed is None:
            raise PlacementError(
                f"could not place asset {inst.name!r} after {max_retries} retries")
        placements.append(placed)
    return placements


def _deal_categories(present: list[str], n_shelves: int, max_per_shelf: int,
                     rng: np.random.Generator) -> list[list[str]]:
    """Deal present categories round-robin over shuffled shelves.

    Every present category lands on some shelf (up to the per-shelf cap);
    categories beyond capacity are dropped.
    """
    capacity = n_shelves * max_per_shelf
    cats = list(present)
    rng.shuffle(cats)
    if len(cats) > capacity:
        cats = cats[:capacity]
    order = list(rng.permutation(n_shelves))
    shelves: list[list[str]] = [[] for _ in range(n_shelves)]
    for i, cat in enumerate(cats):
        shelves[order[i % n_shelves]].append(cat)
    return shelves


def generate_graph(config: GenConfig, seed: int) -> SceneGraph:
    """Generate one scene graph; a pure function of (config, seed)."""
    rng = np.random.default_rng([config.seed, seed])
    graph = SceneGraph()
    room_ids = {room: graph.add_child(graph.root, NodeKind.ROOM, room)
                for room in config.room_types}
    by_cat = config.assets_by_category()
    min_obj, max_obj = config.objects_per_shelf_range
    _, max_cats = config.categories_per_shelf_range

    for stype in config.storage_types:
        row = config.storage_room_prob[stype]
        weights = np.array([row.get(r, 0.0) for r in config.room_types], dtype=np.float64)
        weights = weights / weights.sum()
        room = config.room_types[int(rng.choice(len(config.room_types), p=weights))]
        lo_v, hi_v = config.storage_volume_range[stype]
        volume = round(float(rng.uniform(lo_v, hi_v)), 1)
        storage_id = graph.add_child(room_ids[room], NodeKind.STORAGE, stype, volume=volume)

        lo_k, hi_k = config.shelf_count_range[stype]
        n_shelves = int(rng.integers(lo_k, hi_k + 1))
        shelf_ids = [graph.add_child(storage_id, NodeKind.SHELF, "shelf")
                     for _ in range(n_shelves)]

        present = [cat for cat in config.categories()
                   if by_cat.get(cat) and
                   float(rng.random()) < config.category_storage_prob[cat].get(stype, 0.0)]
        dealt = _deal_categories(present, n_shelves, max_cats, rng)

        for shelf_id, shelf_cats in zip(shelf_ids, dealt):
            if not shelf_cats:
                continue
            n_obj = int(rng.integers(min_obj, max_obj + 1))
            instances = []
            for _ in range(n_obj):
                cat = shelf_cats[int(rng.integers(0, len(shelf_cats)))]
                pool = by_cat[cat]
                instances.append(pool[int(rng.integers(0, len(pool)))])
            try:
                placements = place_objects(instances, rng)
            except PlacementError as exc:
                raise PlacementError(f"shelf {shelf_id} of {stype!r}: {exc}") from None
            for asset, placement in zip(instances, placements):
                graph.add_child(shelf_id, NodeKind.OBJECT, asset.category,
                                description=asset.description, placement=placement)
    return graph


def hidden_objects(graph: SceneGraph) -> list[int]:
    """Non-removed objects currently below the detection threshold."""
    out = []
    for shelf in graph.iter_kind(NodeKind.SHELF):
        vis = set(visible_objects(graph, shelf.id))
        for oid in shelf.children:
            if not graph.node(oid).removed and oid not in vis:
                out.append(oid)
    return sorted(out)


def sample_target(graph: SceneGraph, rng: np.random.Generator, mode: str = "train",
                  config: GenConfig | None = None) -> TargetSpec:
    """Uniform draw over occluded objects (train) or occluded held-out
    instances (test)."""
    if mode not in ("train", "test"):
        raise GenError(f"unknown target mode {mode!r}")
    eligible = hidden_objects(graph)
    if mode == "test":
        if config is None:
            raise GenError("test-mode target sampling needs the generation config")
        by_desc = config.asset_by_description()
        eligible = [oid for oid in eligible
                    if (a := by_desc.get(graph.node(oid).description)) and a.held_out]
    if not eligible:
        raise NoEligibleTargetError(f"no eligible {mode} target in graph")
    obj = graph.node(eligible[int(rng.integers(0, len(eligible)))])
    return TargetSpec(object_id=obj.id, description=obj.description,
                      category=obj.placement.category)


def container_prior(config: GenConfig, graph: SceneGraph, node_id: int,
                    category: str) -> float:
    """Ground-truth probability that a container holds the given category.

    Storage: the presence table value.  Room: complement-product over the
    storage types it might host.  Shelf: its storage's value split evenly
    over the shelf count.
    """
    if category not in config.category_storage_prob:
        raise GenError(f"unknown category {category!r}")
    node = graph.node(node_id)
    cat_row = config.category_storage_prob[category]
    if node.kind == NodeKind.STORAGE:
        return float(cat_row.get(node.label, 0.0))
    if node.kind == NodeKind.ROOM:
        miss = 1.0
        for stype in config.storage_types:
            row = config.storage_room_prob[stype]
            total = sum(row.get(r, 0.0) for r in config.room_types)
            p_in_room = row.get(node.label, 0.0) / total if total > 0 else 0.0
            miss *= 1.0 - p_in_room * cat_row.get(stype, 0.0)
        return 1.0 - miss
    if node.kind == NodeKind.SHELF:
        storage = graph.node(graph.parent_of(node_id))
        return float(cat_row.get(storage.label, 0.0)) / max(1, len(storage.children))
    raise GenError(f"node {node_id} is {node.kind.value}; priors cover room/storage/shelf")


# ---------------------------------------------------------------------------
# Datasets
# ---------------------------------------------------------------------------

def dataset_graph_seed(split_seed: int, index: int) -> int:
    return split_seed * 1_000_003 + index


def generate_dataset(config: GenConfig, count: int, split_seed: int, out_dir) -> dict:
    """Write ``count`` graphs as JSON-lines plus a manifest; returns the manifest."""
    if count < 1:
        raise GenError(f"dataset count must be >= 1, got {count}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = []
    for i in range(count):
        graph = generate_graph(config, dataset_graph_seed(split_seed, i))
        lines.append(serialize_graph(graph))
    payload = "\n".join(lines) + "\n"
    graphs_path = out_dir / "graphs.jsonl"
    graphs_path.write_text(payload, encoding="utf-8")
    manifest = {
        "format_version": DATASET_FORMAT_VERSION,
        "kind": "dataset",
        "count": count,
        "split_seed": split_seed,
        "config_hash": config.config_hash(),
        "graphs_sha256": sha256(payload.encode("utf-8")).hexdigest(),
        "config": config.to_obj(),
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, separators=(",", ":")) + "\n", encoding="utf-8")
    return manifest


def load_dataset(path) -> tuple[list[SceneGraph], dict | None]:
    """Load a dataset directory (graphs.jsonl + manifest.json) or a bare
    JSON-lines file; returns (graphs, manifest-or-None)."""
    path = Path(path)
    manifest = None
    if path.is_dir():
        manifest_path = path / "manifest.json"
        if manifest_path.exists():
            manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        path = path / "graphs.jsonl"
    graphs = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                graphs.append(deserialize_graph(line))
    return graphs, manifest
