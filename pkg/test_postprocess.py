"""
Test script for candidate extraction, box merging, lane clustering and the camera model
"""
import sys
import os

# Add parent directory to path
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

import numpy as np
import pytest

from detector.types import LaneSegmentDet, VehicleBox, DetectionGrid
from exceptions import ConfigurationError, DomainError
from postprocess.camera import CameraModel, ipm_points, ipm_to_3d, project
from postprocess.candidates import extract_candidates
from postprocess.lanes import (
    NOISE,
    cluster_lanes,
    collapse_segments,
    dbscan_segments,
    link_spline,
    segment_midpoints,
)
from postprocess.merge import MergeParams, merge_boxes, similarity_matrix


def _brute_force_dbscan(points: np.ndarray, eps: float, min_pts: int) -> np.ndarray:
    """Reference O(n^2) DBSCAN; clusters grow from unlabelled core points in index order"""
    n = len(points)
    distances = np.sqrt(((points[:, np.newaxis, :] - points[np.newaxis, :, :]) ** 2).sum(axis=2))
    neighbours = [np.flatnonzero(distances[i] <= eps) for i in range(n)]
    core = np.array([len(nb) >= min_pts for nb in neighbours])
    labels = np.full(n, -1)
    cluster = 0
    for i in range(n):
        if labels[i] != -1 or not core[i]:
            continue
        labels[i] = cluster
        queue = list(neighbours[i])
        while queue:
            j = queue.pop()
            if labels[j] == -1:
                labels[j] = cluster
                if core[j]:
                    queue.extend(neighbours[j])
        cluster += 1
    return labels


def _canonical(labels: np.ndarray) -> list:
    names = {}
    return [-1 if label == NOISE else names.setdefault(label, len(names)) for label in labels]


def test_ipm_round_trip():
    """project -> invert at the true depth over 1000 random visible points"""
    rng = np.random.default_rng(0)
    cam = CameraModel(focal=500.0, cx=320.0, cy=200.0, height=1.5, pitch=0.04)
    points = np.column_stack([
        rng.uniform(3.0, 100.0, 1000),
        rng.uniform(-15.0, 15.0, 1000),
        rng.uniform(-0.5, 3.0, 1000),
    ])
    uv, visible = project(points, cam)
    assert visible.all()
    lifted = ipm_points(uv, points[:, 0], cam)
    relative = np.abs(lifted - points) / np.maximum(np.abs(points), 1.0)
    assert relative.max() <= 1e-6


def test_ipm_domain_errors():
    cam = CameraModel(focal=500.0, cx=320.0, cy=240.0, height=1.5, pitch=0.5)
    with pytest.raises(DomainError):
        ipm_to_3d((320.0, 240.0), 0.0, cam)
    with pytest.raises(DomainError):
        ipm_to_3d((320.0, 240.0 + 3 * 500.0), 10.0, cam)
    x, y, z = ipm_to_3d((320.0, 240.0), 20.0, cam)
    assert x == pytest.approx(20.0)
    assert y == pytest.approx(0.0)


def test_camera_scaled():
    cam = CameraModel(focal=500.0, cx=320.0, cy=240.0)
    half = cam.scaled(0.5)
    point = np.array([[30.0, 2.0, 0.0]])
    np.testing.assert_allclose(project(point, half)[0], project(point, cam)[0] * 0.5)


def _grid(probs, vehicle_reg=None, lane_reg=None) -> DetectionGrid:
    rows, cols = probs.shape[1:]
    return DetectionGrid(
        probs=probs,
        vehicle_reg=np.zeros((5, rows, cols)) if vehicle_reg is None else vehicle_reg,
        lane_reg=np.zeros((6, rows, cols)) if lane_reg is None else lane_reg,
    )


def test_extract_candidates_thresholds_and_degenerates():
    probs = np.zeros((3, 2, 2))
    probs[0] = 1.0
    probs[:, 0, 0] = [0.1, 0.8, 0.1]
    probs[:, 0, 1] = [0.5, 0.5, 0.0]
    probs[:, 1, 0] = [0.2, 0.1, 0.7]
    probs[:, 1, 1] = [0.1, 0.9, 0.0]
    vehicle_reg = np.zeros((5, 2, 2))
    vehicle_reg[:, 0, 0] = [1, 2, 10, 12, 20]
    vehicle_reg[:, 0, 1] = [1, 2, 10, 12, 20]
    vehicle_reg[:, 1, 1] = [5, 2, 5, 12, 20]
    lane_reg = np.zeros((6, 2, 2))
    lane_reg[:, 1, 0] = [0, 10, 4, 6, 8, 12]
    vehicles, lanes = extract_candidates(_grid(probs, vehicle_reg, lane_reg), threshold=0.5)
    assert vehicles == [VehicleBox(1, 2, 10, 12, 20, score=0.8)]
    assert lanes == [LaneSegmentDet(0, 10, 4, 6, 8, 12, score=0.7)]


def test_extract_candidates_all_background():
    probs = np.zeros((3, 4, 4))
    probs[0] = 1.0
    assert extract_candidates(_grid(probs)) == ([], [])


def test_merge_recovers_jittered_clusters():
    """10 boxes x 8 jittered copies -> 10 means; isolated singletons are dropped"""
    rng = np.random.default_rng(1)
    candidates = []
    for k in range(10):
        w, h = rng.uniform(30, 60), rng.uniform(25, 50)
        x1, y1 = (k % 5) * 120 + 10, (k // 5) * 120 + 10
        for _ in range(8):
            jitter = rng.uniform(-0.05, 0.05, 4) * min(w, h)
            candidates.append(VehicleBox(x1 + jitter[0], y1 + jitter[1], x1 + w + jitter[2], y1 + h + jitter[3],
                                         depth=float(20 + k), score=float(rng.uniform(0.5, 1.0))))
    singletons = [VehicleBox(700 + 80 * i, 400, 730 + 80 * i, 430, depth=50.0) for i in range(3)]
    order = rng.permutation(len(candidates))
    shuffled = [candidates[i] for i in order] + singletons

    merged = merge_boxes(shuffled, MergeParams(eps=0.2, min_group=2))
    assert len(merged) == 10
    for box in merged:
        members = [c for c in candidates if np.allclose(np.abs(np.array(c.rect) - np.array(box.rect)), 0, atol=10)]
        mean = np.mean([c.rect for c in members], axis=0)
        assert len(members) == 8
        assert np.abs(np.array(box.rect) - mean).max() <= 2.0
        assert box.score == max(c.score for c in members)

    kept = merge_boxes(singletons, MergeParams(eps=0.2, min_group=1))
    assert len(kept) == 3


def test_merge_empty_and_similarity_rule():
    assert merge_boxes([]) == []
    coords = np.array([[0, 0, 10, 10], [2, 0, 12, 10], [3, 0, 13, 10]], dtype=np.float64)
    similar = similarity_matrix(coords, eps=0.2)
    assert similar[0, 1] and similar[1, 2] and not similar[0, 2]
    # transitive closure puts all three in one group
    assert len(merge_boxes([VehicleBox(*c, depth=10.0) for c in coords], MergeParams(0.2, 3))) == 1


def test_merge_chain_settles_in_one_pass():
    """A~B but C~mean(A, B) only: the output is one box and re-merging keeps it"""
    boxes = [
        VehicleBox(0.0, 0.0, 10.0, 10.0, depth=10.0, score=0.6),
        VehicleBox(2.0, -2.0, 12.0, 8.0, depth=12.0, score=0.9),
        VehicleBox(2.1, 0.1, 12.1, 10.1, depth=14.0, score=0.7),
    ]
    params = MergeParams(eps=0.2, min_group=1)
    merged = merge_boxes(boxes, params)
    assert len(merged) == 1
    np.testing.assert_allclose(merged[0].rect, np.mean([b.rect for b in boxes], axis=0))
    assert merged[0].depth == pytest.approx(12.0)
    assert merged[0].score == 0.9
    assert merge_boxes(merged, params) == merged


def test_merge_output_is_a_fixed_point():
    params = MergeParams(eps=0.2, min_group=1)
    for seed in range(20):
        rng = np.random.default_rng(seed)
        corners = rng.uniform(0, 80, (60, 2))
        sizes = rng.uniform(15, 40, (60, 2))
        boxes = [VehicleBox(x, y, x + w, y + h, depth=float(rng.uniform(5, 80)), score=float(rng.uniform()))
                 for (x, y), (w, h) in zip(corners, sizes)]
        merged = merge_boxes(boxes, params)
        coords = np.array([box.rect for box in merged])
        similar = similarity_matrix(coords, params.eps)
        assert not (similar & ~np.eye(len(merged), dtype=bool)).any()
        assert merge_boxes(merged, params) == merged


def test_merge_ignores_input_order():
    rng = np.random.default_rng(5)
    boxes = []
    for k in range(6):
        x1, y1 = k * 90.0, (k % 2) * 90.0
        for _ in range(5):
            jitter = rng.uniform(-2, 2, 4)
            boxes.append(VehicleBox(x1 + jitter[0], y1 + jitter[1], x1 + 50 + jitter[2], y1 + 40 + jitter[3],
                                    depth=float(10 + k), score=float(rng.uniform(0.5, 1.0))))
    boxes += [VehicleBox(600.0, 300.0, 630.0, 330.0, depth=40.0)]

    def summary(merged):
        return np.array(sorted((*box.rect, box.depth, box.score) for box in merged))

    for min_group in (1, 2):
        params = MergeParams(eps=0.2, min_group=min_group)
        expected = summary(merge_boxes(boxes, params))
        assert len(expected) == 6 + (min_group == 1)
        for seed in range(10):
            order = np.random.default_rng(seed).permutation(len(boxes))
            np.testing.assert_allclose(summary(merge_boxes([boxes[i] for i in order], params)), expected)


def test_dbscan_matches_brute_force_reference():
    """200 random segments over 20 seeds, identical partitions up to renaming"""
    cam = CameraModel(focal=500.0, cx=320.0, cy=200.0, height=1.5)
    for seed in range(20):
        rng = np.random.default_rng(seed)
        depth_a = rng.uniform(5.0, 60.0, 200)
        depth_b = depth_a + rng.uniform(0.5, 3.0, 200)
        u = rng.uniform(260, 380, 200)
        segments = [
            LaneSegmentDet(u[i], 200 + 750 / depth_a[i], u[i] + rng.uniform(-4, 4), 200 + 750 / depth_b[i],
                           depth_a[i], depth_b[i])
            for i in range(200)
        ]
        midpoints, liftable = segment_midpoints(segments, cam)
        assert liftable.all()
        for scale in (1.0, 0.3):
            labels = dbscan_segments(midpoints, eps_m=2.0, min_pts=3, longitudinal_scale=scale)
            scaled = midpoints * np.array([scale, 1.0, 1.0])
            assert _canonical(labels) == _canonical(_brute_force_dbscan(scaled, 2.0, 3))


def test_dbscan_parameter_checks():
    assert len(dbscan_segments(np.zeros((0, 3)))) == 0
    with pytest.raises(ConfigurationError):
        dbscan_segments(np.zeros((3, 3)), eps_m=0.0)
    # a lone point is its own neighbourhood
    assert dbscan_segments(np.zeros((1, 3)), min_pts=1).tolist() == [0]


def test_link_spline_orders_and_averages():
    segs = [
        LaneSegmentDet(12, 20, 10, 30, 20.0, 10.0),
        LaneSegmentDet(10, 31, 8, 40, 10.0, 5.0),
        LaneSegmentDet(14, 10, 12, 19, 30.0, 21.0),
    ]
    lane = link_spline(segs, lane_id=4)
    assert lane.id == 4
    np.testing.assert_allclose(lane.knots, [
        [8, 40, 5.0], [10, 30.5, 10.0], [12, 19.5, 20.5], [14, 10, 30.0],
    ])
    assert lane.polyline3d.shape == (0, 3)
    with pytest.raises(ConfigurationError):
        link_spline([])


def test_collapse_segments_merges_duplicates():
    segs = [LaneSegmentDet(0, 0, 10, 10, 5, 6), LaneSegmentDet(10.5, 10, 0.5, 0, 6, 5), LaneSegmentDet(50, 0, 60, 10, 5, 6)]
    collapsed = collapse_segments(segs, tol_px=2.0)
    assert len(collapsed) == 2
    assert collapsed[0].xa == pytest.approx(0.25)


def _boundary_segments(cam: CameraModel) -> list:
    """Segments of two straight boundaries at -1.8 m and +1.8 m plus one far stray"""
    segments = []
    for lateral in (-1.8, 1.8):
        xs = np.arange(8.0, 60.0, 1.5)
        points = np.column_stack([xs, np.full_like(xs, lateral), np.zeros_like(xs)])
        uv, _ = project(points, cam)
        for i in range(len(xs) - 1):
            segments.append(LaneSegmentDet(uv[i, 0], uv[i, 1], uv[i + 1, 0], uv[i + 1, 1], xs[i], xs[i + 1]))
    uv, _ = project(np.array([[30.0, 9.0, 0.0], [31.0, 9.0, 0.0]]), cam)
    segments.append(LaneSegmentDet(uv[0, 0], uv[0, 1], uv[1, 0], uv[1, 1], 30.0, 31.0))
    return segments


def test_cluster_lanes_separates_boundaries():
    cam = CameraModel(focal=500.0, cx=320.0, cy=200.0, height=1.5)
    lanes = cluster_lanes(_boundary_segments(cam), cam, eps_m=2.0, min_pts=3, collapse_px=0.0)
    assert len(lanes) == 2
    lanes.sort(key=lambda lane: lane.polyline3d[:, 1].mean())
    for lane, lateral in zip(lanes, (-1.8, 1.8)):
        np.testing.assert_allclose(lane.polyline3d[:, 1], lateral, atol=1e-6)
        assert np.all(np.diff(lane.knots[:, 2]) > 0)
    assert cluster_lanes([], cam) == []


def test_lane_clustering_ignores_segment_order():
    cam = CameraModel(focal=500.0, cx=320.0, cy=200.0, height=1.5)
    segments = _boundary_segments(cam)
    midpoints, _ = segment_midpoints(segments, cam)
    labels = dbscan_segments(midpoints, eps_m=2.0, min_pts=3)
    assert labels[-1] == NOISE

    def polylines(lanes):
        return sorted((lane.polyline3d for lane in lanes), key=lambda p: p[:, 1].mean())

    expected = polylines(cluster_lanes(segments, cam, eps_m=2.0, min_pts=3, collapse_px=0.0))
    for seed in range(10):
        order = np.random.default_rng(seed).permutation(len(segments))
        shuffled = [segments[i] for i in order]
        permuted = dbscan_segments(midpoints[order], eps_m=2.0, min_pts=3)
        restored = np.empty_like(permuted)
        restored[order] = permuted
        assert _canonical(restored) == _canonical(labels)

        actual = polylines(cluster_lanes(shuffled, cam, eps_m=2.0, min_pts=3, collapse_px=0.0))
        assert len(actual) == len(expected) == 2
        for got, want in zip(actual, expected):
            np.testing.assert_allclose(got, want, atol=1e-9)


def main():
    """Run all tests"""
    print("\n" + "=" * 60)
    print("Post-processing tests")
    print("=" * 60)

    tests = [value for name, value in sorted(globals().items()) if name.startswith('test_') and callable(value)]
    for test in tests:
        test()
        print(f"  ok  {test.__name__}")

    print("\n" + "=" * 60)
    print(f"All {len(tests)} tests passed!")
    print("=" * 60)


if __name__ == "__main__":
    main()
