import time

import numpy as np
import pytest

from posefield.decode import greedy_decode
from posefield.field import FieldGrid, Point2D
from posefield.graph import (COCO_KEYPOINTS, GraphError, KinematicGraph, default_coco_graph,
                             from_undirected, load_graph)
from posefield.hough import HoughMaps, SeedCandidate, accumulate_hough, extract_seeds
from posefield.refine import refine_mid_offsets
from posefield.synth import SceneSpec, render_outputs

from _scenes import person_from, scaled_template, separated_scene, two_person_scene


def _decode(outputs, graph, **kw):
    mid = refine_mid_offsets(outputs.mid_offsets, outputs.short_offsets, graph)
    hough = accumulate_hough(outputs.heatmaps, outputs.short_offsets)
    seeds = extract_seeds(hough)
    return greedy_decode(seeds, hough, mid, graph, short_offsets=outputs.short_offsets, **kw)


def _match(instances, scene):
    """Instance index per ground-truth person, by nearest mean keypoint distance."""
    out = []
    for p in scene.persons:
        d = [np.linalg.norm(inst.keypoints - p.keypoints, axis=1).mean() for inst in instances]
        out.append(int(np.argmin(d)))
    return out


class TestGraph:
    def test_default_size(self, graph):
        assert graph.num_keypoints == 17
        assert len(graph.edges) == 32
        assert len(graph.undirected_edges()) == 16

    def test_tree(self, graph):
        # connected with K-1 undirected edges implies acyclic
        reached = {0} | {dst for _, dst in graph.traversal(0)}
        assert reached == set(range(17))
        assert len(graph.undirected_edges()) == graph.num_keypoints - 1

    def test_degrees(self, graph):
        assert all(len(graph.neighbors(k)) >= 1 for k in range(17))

    def test_reverses_present(self, graph):
        edges = set(graph.edges)
        assert all((b, a) in edges for a, b in edges)

    def test_named_edges(self, graph):
        idx = {n: i for i, n in enumerate(COCO_KEYPOINTS)}
        und = {frozenset(e) for e in graph.undirected_edges()}
        for a, b in [("nose", "left_eye"), ("left_knee", "left_ankle"), ("right_shoulder", "right_hip"),
                     ("nose", "left_shoulder")]:
            assert frozenset((idx[a], idx[b])) in und

    def test_traversal_bfs_from_every_root(self, graph):
        for root in range(17):
            placed = {root}
            for src, dst in graph.traversal(root):
                assert src in placed and dst not in placed
                placed.add(dst)
            assert len(placed) == 17

    def test_rejects_cycle_and_missing_reverse(self):
        with pytest.raises(GraphError):
            KinematicGraph(3, ((0, 1), (1, 0), (1, 2), (2, 1), (2, 0), (0, 2)))
        with pytest.raises(GraphError):
            KinematicGraph(3, ((0, 1), (1, 0), (1, 2), (0, 2)))
        with pytest.raises(GraphError):
            from_undirected([(0, 1), (0, 1)], 3)

    def test_load_graph_file(self, tmp_path):
        path = tmp_path / "g.txt"
        path.write_text("# tiny\n0 1\n1 2\n")
        g = load_graph(path, names=())
        assert g.num_keypoints == 3 and len(g.edges) == 4

    def test_load_default_by_names(self, tmp_path, graph):
        idx = {n: i for i, n in enumerate(COCO_KEYPOINTS)}
        lines = [f"{COCO_KEYPOINTS[a]} {COCO_KEYPOINTS[b]}" for a, b in graph.undirected_edges()]
        path = tmp_path / "coco.txt"
        path.write_text("\n".join(lines) + "\n")
        g = load_graph(path)
        assert set(g.edges) == set(graph.edges)
        assert idx["nose"] == 0


def test_empty_seeds(graph):
    hough = HoughMaps(FieldGrid(np.zeros((4, 4, 17)), 8), 32.0)
    assert greedy_decode([], hough, FieldGrid(np.zeros((4, 4, 64)), 8), graph) == []


def test_two_person_oracle(graph):
    scene = two_person_scene()
    instances = _decode(render_outputs(scene, 8), graph)
    assert len(instances) == 2
    for j, p in zip(_match(instances, scene), scene.persons):
        err = np.linalg.norm(instances[j].keypoints - p.keypoints, axis=1)
        assert err.max() <= 4.0
    assert all(inst.keypoint_present.all() for inst in instances)


def test_close_seeds_make_one_instance():
    graph = from_undirected([(0, 1)], 2)
    hough = HoughMaps(FieldGrid(np.zeros((10, 10, 2)), 8), 32.0)
    mid = FieldGrid(np.zeros((10, 10, 4)), 8)
    strong = SeedCandidate(Point2D(40.0, 40.0), 0, 0.9, 4, 4)
    weak = SeedCandidate(Point2D(44.0, 37.0), 0, 0.5, 4, 5)
    instances = greedy_decode([weak, strong], hough, mid, graph, nms_radius=10)
    assert len(instances) == 1
    assert tuple(instances[0].keypoints[0]) == (40.0, 40.0)


def test_seed_exactly_at_radius_rejected():
    graph = from_undirected([(0, 1)], 2)
    hough = HoughMaps(FieldGrid(np.zeros((10, 10, 2)), 8), 32.0)
    mid = FieldGrid(np.zeros((10, 10, 4)), 8)
    a = SeedCandidate(Point2D(40.0, 40.0), 0, 0.9, 0, 0)
    b = SeedCandidate(Point2D(50.0, 40.0), 0, 0.5, 0, 1)
    c = SeedCandidate(Point2D(50.5, 40.0), 0, 0.4, 0, 2)
    instances = greedy_decode([a, b, c], hough, mid, graph, nms_radius=10)
    # b sits exactly r from a and is rejected; c is 10.5 px away and starts a new instance
    assert [inst.keypoints[0, 0] for inst in instances] == [40.0, 50.5]


def test_nose_channel_zeroed(graph):
    kps = scaled_template((100, 60), 240)
    scene = SceneSpec(320, 360, [person_from(kps)])
    out = render_outputs(scene, 8)
    heat = out.heatmaps.data.copy()
    heat[:, :, 0] = 0
    zeroed = type(out)(**{**out.grids(), "heatmaps": FieldGrid(heat, 8)},
                       image_height=out.image_height, image_width=out.image_width)
    instances = _decode(zeroed, graph)
    assert len(instances) == 1
    assert instances[0].seed_type != 0
    err = np.linalg.norm(instances[0].keypoints - kps, axis=1)
    assert err.max() <= 4.0


@pytest.mark.parametrize("seed", range(5))
def test_rejection_invariant(seed, graph):
    out = render_outputs(separated_scene(seed), 8)
    instances = _decode(out, graph)
    for j, inst in enumerate(instances):
        k = inst.seed_type
        for prev in instances[:j]:
            assert np.linalg.norm(prev.keypoints[k] - inst.keypoints[k]) > 10


def test_output_bounded_by_seeds(rng, graph):
    heat = FieldGrid(rng.uniform(0, 1, (12, 12, 17)), 8)
    short = FieldGrid(rng.normal(0, 6, (12, 12, 34)), 8)
    mid = FieldGrid(rng.normal(0, 30, (12, 12, 64)), 8)
    hough = accumulate_hough(heat, short)
    seeds = extract_seeds(hough)
    instances = greedy_decode(seeds, hough, mid, graph)
    assert len(instances) <= len(seeds)
    assert [inst.decode_order for inst in instances] == list(range(len(instances)))


def test_snap_radius_moves_to_hough_peak():
    graph = from_undirected([(0, 1)], 2)
    h = np.zeros((10, 10, 2))
    h[5, 6, 1] = 1.0
    hough = HoughMaps(FieldGrid(h, 8), 32.0)
    mid = np.zeros((10, 10, 4))
    mid[:, :, 2 * graph.channel(0, 1)] = 10.0       # lands 2 px right of the peak cell center
    seed = SeedCandidate(Point2D(44.0, 44.0), 0, 0.9, 5, 5)
    plain = greedy_decode([seed], hough, FieldGrid(mid, 8), graph)
    snapped = greedy_decode([seed], hough, FieldGrid(mid, 8), graph, snap_radius=12)
    assert tuple(plain[0].keypoints[1]) == (54.0, 44.0)
    assert tuple(snapped[0].keypoints[1]) == (52.0, 44.0)


def test_decode_100_instances_fast():
    graph = default_coco_graph()
    scene = separated_scene(11, num_persons=100, width=1600, height=1600)
    out = render_outputs(scene, 8)
    mid = refine_mid_offsets(out.mid_offsets, out.short_offsets, graph)
    hough = accumulate_hough(out.heatmaps, out.short_offsets)
    seeds = extract_seeds(hough)
    best = np.inf
    for _ in range(3):
        t0 = time.perf_counter()
        instances = greedy_decode(seeds, hough, mid, graph, short_offsets=out.short_offsets)
        best = min(best, time.perf_counter() - t0)
    assert len(instances) == 100
    assert best < 0.05
