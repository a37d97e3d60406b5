import json

import numpy as np
import pytest

from scenesearch import procgen
from scenesearch.scenegraph import (
    GraphError,
    GraphParseError,
    IllegalActionError,
    KindError,
    NodeKind,
    Placement,
    SceneGraph,
    deserialize_graph,
    graph_hash,
    occluders_of,
    occlusion_fraction,
    remove_object,
    serialize_graph,
    visible_objects,
)

from conftest import build_shelf_graph, mc_occlusion


class TestOcclusionFraction:
    def test_single_object_unoccluded(self):
        g, shelf, ids = build_shelf_graph([(0.5, 0.2, 0.4, 0.4, 0.5)])
        assert occlusion_fraction(g, shelf, ids[0]) == 0.0

    def test_full_cover(self):
        g, shelf, ids = build_shelf_graph([
            (0.5, 0.25, 0.5, 0.5, 0.0),   # nearer, strictly larger
            (0.5, 0.2, 0.2, 0.2, 0.5),    # fully inside the nearer rect
        ])
        assert occlusion_fraction(g, shelf, ids[1]) == 1.0

    def test_half_cover_closed_form_and_monte_carlo(self):
        # target rect x in [0.3,0.5], y in [0.1,0.3]; sibling covers its left half
        g, shelf, ids = build_shelf_graph([
            (0.35, 0.2, 0.1, 0.4, 0.0),
            (0.4, 0.2, 0.2, 0.2, 0.5),
        ])
        frac = occlusion_fraction(g, shelf, ids[1])
        assert frac == pytest.approx(0.5, abs=1e-12)
        assert frac == pytest.approx(mc_occlusion(g, shelf, ids[1]), abs=0.02)

    def test_same_depth_does_not_occlude(self):
        g, shelf, ids = build_shelf_graph([
            (0.5, 0.2, 0.4, 0.4, 0.5),
            (0.5, 0.2, 0.4, 0.4, 0.5),
        ])
        assert occlusion_fraction(g, shelf, ids[0]) == 0.0
        assert occlusion_fraction(g, shelf, ids[1]) == 0.0

    def test_union_not_double_counted(self):
        # two nearer siblings overlap each other over the target
        g, shelf, ids = build_shelf_graph([
            (0.45, 0.25, 0.3, 0.5, 0.0),
            (0.55, 0.25, 0.3, 0.5, 0.25),
            (0.5, 0.2, 0.4, 0.4, 0.75),
        ])
        frac = occlusion_fraction(g, shelf, ids[2])
        assert frac == pytest.approx(mc_occlusion(g, shelf, ids[2]), abs=0.02)
        assert frac <= 1.0

    def test_errors(self):
        g, shelf, ids = build_shelf_graph([(0.5, 0.2, 0.4, 0.4, 0.0)])
        with pytest.raises(GraphError):
            occlusion_fraction(g, shelf, 999)
        with pytest.raises(KindError):
            occlusion_fraction(g, ids[0], ids[0])
        g.node(ids[0]).removed = True
        with pytest.raises(IllegalActionError):
            occlusion_fraction(g, shelf, ids[0])


class TestVisibleObjects:
    def test_empty_shelf(self):
        g, shelf, _ = build_shelf_graph([])
        assert visible_objects(g, shelf) == []

    def test_non_overlapping_all_visible(self):
        g, shelf, ids = build_shelf_graph([
            (0.15, 0.15, 0.2, 0.3, 0.0),
            (0.5, 0.15, 0.2, 0.3, 0.25),
            (0.85, 0.15, 0.2, 0.3, 0.5),
        ])
        assert visible_objects(g, shelf) == sorted(ids)

    def test_mostly_covered_object_hidden(self):
        # back object 80% covered by the front one
        g, shelf, ids = build_shelf_graph([
            (0.44, 0.25, 0.24, 0.5, 0.0),
            (0.5, 0.15, 0.2, 0.3, 0.5),
        ])
        assert occlusion_fraction(g, shelf, ids[1]) == pytest.approx(0.8, abs=1e-9)
        assert visible_objects(g, shelf) == [ids[0]]

    def test_kind_mismatch(self):
        g, shelf, ids = build_shelf_graph([(0.5, 0.2, 0.4, 0.4, 0.0)])
        with pytest.raises(KindError):
            visible_objects(g, ids[0])

    @pytest.mark.parametrize("cover_w,expect_visible", [(0.116, True), (0.124, False)])
    def test_detection_threshold_direction(self, cover_w, expect_visible):
        # covered fraction just below / above 0.3 of the target's rectangle
        g, shelf, ids = build_shelf_graph([
            (0.3 + cover_w / 2, 0.25, cover_w, 0.5, 0.0),
            (0.5, 0.2, 0.4, 0.4, 0.5),
        ])
        frac = occlusion_fraction(g, shelf, ids[1])
        assert (frac <= 0.3) == expect_visible
        assert (ids[1] in visible_objects(g, shelf)) == expect_visible


class TestOccludersOf:
    def test_no_overlap_no_occluders(self):
        g, shelf, ids = build_shelf_graph([
            (0.2, 0.15, 0.2, 0.3, 0.0),
            (0.7, 0.15, 0.2, 0.3, 0.5),
        ])
        assert occluders_of(g, shelf, ids[1]) == set()

    def test_full_cover_single_occluder(self):
        g, shelf, ids = build_shelf_graph([
            (0.5, 0.25, 0.5, 0.5, 0.0),
            (0.5, 0.2, 0.2, 0.2, 0.5),
        ])
        assert occluders_of(g, shelf, ids[1]) == {ids[0]}

    def test_two_disjoint_occluders(self):
        g, shelf, ids = build_shelf_graph([
            (0.38, 0.25, 0.16, 0.5, 0.0),    # covers 0.4 of target width
            (0.53, 0.25, 0.14, 0.5, 0.25),   # covers 0.35, disjoint overlap
            (0.5, 0.2, 0.4, 0.4, 0.5),
        ])
        target = ids[2]
        assert occluders_of(g, shelf, target) == {ids[0], ids[1]}
        assert occlusion_fraction(g, shelf, target) == pytest.approx(0.75, abs=1e-9)

    def test_touching_rectangles_do_not_occlude(self):
        g, shelf, ids = build_shelf_graph([
            (0.2, 0.2, 0.2, 0.4, 0.0),   # right edge at x=0.3
            (0.4, 0.2, 0.2, 0.4, 0.5),   # left edge at x=0.3
        ])
        assert occluders_of(g, shelf, ids[1]) == set()


class TestRemoveObject:
    def test_remove_sole_occluder_reveals(self):
        g, shelf, ids = build_shelf_graph([
            (0.5, 0.25, 0.5, 0.5, 0.0),
            (0.5, 0.2, 0.2, 0.2, 0.5),
        ])
        assert remove_object(g, ids[0]) == [ids[1]]
        assert g.node(ids[0]).removed

    def test_remove_non_occluder_reveals_nothing(self):
        g, shelf, ids = build_shelf_graph([
            (0.2, 0.15, 0.2, 0.3, 0.0),
            (0.7, 0.15, 0.2, 0.3, 0.5),
        ])
        assert remove_object(g, ids[0]) == []

    def test_stacked_occluders_partial_then_full_reveal(self):
        # front covers 50%, mid covers a disjoint 40%: removing the front
        # leaves 40% occlusion (still hidden); removing both reveals.
        g, shelf, ids = build_shelf_graph([
            (0.40, 0.25, 0.20, 0.5, 0.0),
            (0.58, 0.25, 0.16, 0.5, 0.25),
            (0.5, 0.2, 0.4, 0.4, 0.5),
        ])
        target = ids[2]
        assert occlusion_fraction(g, shelf, target) == pytest.approx(0.9, abs=1e-9)
        assert remove_object(g, ids[0]) == []
        assert occlusion_fraction(g, shelf, target) == pytest.approx(0.4, abs=1e-9)
        assert target not in visible_objects(g, shelf)
        assert remove_object(g, ids[1]) == [target]

    def test_remove_hidden_or_removed_is_illegal(self):
        g, shelf, ids = build_shelf_graph([
            (0.5, 0.25, 0.5, 0.5, 0.0),
            (0.5, 0.2, 0.2, 0.2, 0.5),
        ])
        with pytest.raises(IllegalActionError):
            remove_object(g, ids[1])
        remove_object(g, ids[0])
        with pytest.raises(IllegalActionError):
            remove_object(g, ids[0])


class TestSerialization:
    def test_round_trip_equality(self):
        g, _, ids = build_shelf_graph([(0.5, 0.25, 0.5, 0.5, 0.0),
                                       (0.5, 0.2, 0.2, 0.2, 0.5)])
        g.node(ids[0]).removed = True
        g.node(1).explored = True
        text = serialize_graph(g)
        assert deserialize_graph(text) == g

    def test_serialize_deterministic(self):
        g, _, _ = build_shelf_graph([(0.5, 0.2, 0.2, 0.2, 0.5)])
        assert serialize_graph(g) == serialize_graph(g)
        assert graph_hash(g) == graph_hash(g.copy())

    def test_corpus_round_trips_losslessly(self):
        config = procgen.default_config("train")
        for seed in range(100):
            g = procgen.generate_graph(config, seed)
            text = serialize_graph(g)
            restored = deserialize_graph(text)
            assert restored == g
            assert serialize_graph(restored) == text

    def test_malformed_json_reports_position(self):
        with pytest.raises(GraphParseError) as err:
            deserialize_graph('{"version":1,"root":0,"nodes":[')
        assert err.value.position > 0

    def test_bad_kind_rejected(self):
        g, _, _ = build_shelf_graph([])
        record = json.loads(serialize_graph(g))
        record["nodes"][1]["kind"] = "attic"
        with pytest.raises(GraphParseError):
            deserialize_graph(json.dumps(record))

    def test_wrong_version_rejected(self):
        g, _, _ = build_shelf_graph([])
        record = json.loads(serialize_graph(g))
        record["version"] = 99
        with pytest.raises(GraphParseError):
            deserialize_graph(json.dumps(record))


class TestGraphStructure:
    def test_kind_ordering_enforced(self):
        g = SceneGraph()
        with pytest.raises(KindError):
            g.add_child(g.root, NodeKind.STORAGE, "fridge")
        room = g.add_child(g.root, NodeKind.ROOM, "kitchen")
        with pytest.raises(KindError):
            g.add_child(room, NodeKind.OBJECT, "dairy")

    def test_object_requires_placement_and_description(self):
        g = SceneGraph()
        room = g.add_child(g.root, NodeKind.ROOM, "kitchen")
        storage = g.add_child(room, NodeKind.STORAGE, "fridge", volume=100.0)
        shelf = g.add_child(storage, NodeKind.SHELF, "shelf")
        with pytest.raises(GraphError):
            g.add_child(shelf, NodeKind.OBJECT, "dairy")

    def test_ids_follow_insertion_order(self):
        g, shelf, ids = build_shelf_graph([(0.5, 0.2, 0.2, 0.2, 0.5)])
        assert g.root == 0
        assert ids[0] == 4
        assert sorted(g.nodes) == list(range(5))


class TestInvariantProperties:
    """Randomized checks of the occlusion/mutation invariants."""

    def _random_graph(self, seed):
        rng = np.random.default_rng(seed)
        objects = []
        for _ in range(int(rng.integers(3, 12))):
            w = float(rng.uniform(0.08, 0.3))
            h = float(rng.uniform(0.1, 0.45))
            cx = float(rng.uniform(w / 2, 1 - w / 2))
            depth = float(rng.choice([0.0, 0.25, 0.5, 0.75, 1.0]))
            objects.append((cx, h / 2, w, h, depth))
        return build_shelf_graph(objects)

    def test_occlusion_monotone_under_removal(self):
        for seed in range(25):
            g, shelf, ids = self._random_graph(seed)
            rng = np.random.default_rng(seed + 1000)
            before = {o: occlusion_fraction(g, shelf, o) for o in ids}
            vis = visible_objects(g, shelf)
            while vis:
                victim = int(rng.choice(vis))
                remove_object(g, victim)
                remaining = [o for o in ids if not g.node(o).removed]
                for o in remaining:
                    now = occlusion_fraction(g, shelf, o)
                    assert now <= before[o] + 1e-12
                    before[o] = now
                vis = visible_objects(g, shelf)
                g.validate()

    def test_visible_set_rederivable(self):
        for seed in range(25):
            g, shelf, ids = self._random_graph(seed)
            vis = visible_objects(g, shelf)
            expected = [o for o in sorted(ids)
                        if not g.node(o).removed
                        and occlusion_fraction(g, shelf, o) <= 0.3]
            assert vis == expected

    def test_occluders_imply_positive_occlusion(self):
        for seed in range(25):
            g, shelf, ids = self._random_graph(seed)
            for o in ids:
                if occluders_of(g, shelf, o):
                    assert occlusion_fraction(g, shelf, o) > 0.0

    def test_removing_occluders_eventually_reveals(self):
        def visible_frontier(g, shelf, node):
            # walk occluder chains until a removable (visible) one appears
            occ = sorted(occluders_of(g, shelf, node))
            vis = set(visible_objects(g, shelf))
            for o in occ:
                if o in vis:
                    return o
            return visible_frontier(g, shelf, occ[0])

        for seed in range(25):
            g, shelf, ids = self._random_graph(seed)
            hidden = [o for o in ids if o not in visible_objects(g, shelf)]
            if not hidden:
                continue
            target = hidden[0]
            for _ in range(len(ids) + 1):
                if target in visible_objects(g, shelf):
                    break
                remove_object(g, visible_frontier(g, shelf, target))
            assert target in visible_objects(g, shelf)

    def test_closed_form_matches_monte_carlo(self):
        for seed in range(10):
            g, shelf, ids = self._random_graph(seed + 50)
            for o in ids[:3]:
                frac = occlusion_fraction(g, shelf, o)
                assert frac == pytest.approx(
                    mc_occlusion(g, shelf, o, n=20_000, seed=seed), abs=0.02)
