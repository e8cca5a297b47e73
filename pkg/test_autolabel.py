"""
Test script for lane auto-labeling from point-cloud maps
"""
import sys
import os
import dataclasses
import json

# Add parent directory to path
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

import numpy as np
import pytest

from autolabel.boundaries import (
    apply_corrections,
    filter_points,
    fit_boundary,
    lateral_rms_error,
    load_corrections,
    replicate_boundaries,
)
from autolabel.pointcloud import (
    PointCloud,
    Trajectory,
    read_cloud,
    read_trajectory,
    write_cloud_binary,
    write_cloud_csv,
    write_trajectory,
)
from autolabel.projection import Cuboid, cuboid_box, project_labels
from autolabel.synth import SceneConfig, render_frame, road_point, synth_scene, truth_boundaries
from config import DESK_CONFIG
from exceptions import BoundaryNotFoundError, ConfigurationError
from pipeline.labeling import run_autolabel, run_synth, scene_dir_name
from pipeline.run_config import load_run_config
from postprocess.camera import CameraModel

SCENE_CURVATURES = (0.0, 0.004, -0.004, 0.008, 0.0)


def _straight_trajectory(length: float = 100.0) -> Trajectory:
    x = np.arange(0.0, length + 1e-9, 1.0)
    return Trajectory(np.column_stack([x / 25.0, x, np.zeros_like(x), np.zeros_like(x), np.zeros_like(x)]))


def _paint(trajectory: Trajectory, lateral: float, spacing: float = 0.25) -> PointCloud:
    s = np.arange(0.0, trajectory.length, spacing)
    return PointCloud(trajectory.point_at(s, np.full_like(s, lateral)), np.full_like(s, 200.0))


def _vehicle(s_rear: float, lateral: float, color=(200, 40, 40), length=4.5, width=1.8, height=1.5) -> Cuboid:
    corners = []
    for s in (s_rear, s_rear + length):
        for offset, z in ((lateral - width / 2, 0.0), (lateral + width / 2, 0.0),
                          (lateral + width / 2, height), (lateral - width / 2, height)):
            point = road_point(np.array([s]), np.array([offset]), 0.0)[0]
            point[2] = z
            corners.append(point)
    return Cuboid(corners=np.array(corners), color=color)


def test_autolabel_recovers_synthetic_boundaries():
    """Straight and curved scenes: every boundary within 0.1 m RMS of the generator"""
    cam = CameraModel()
    for seed, curvature in enumerate(SCENE_CURVATURES):
        scene = synth_scene(SceneConfig(curvature=curvature, frames=0), cam, seed=seed)
        left_points, right_points = filter_points(scene.cloud, scene.trajectory)
        left = fit_boundary(left_points, scene.trajectory, side='left')
        right = fit_boundary(right_points, scene.trajectory, side='right')
        boundaries = replicate_boundaries(left, right, scene.trajectory)

        assert [b.boundary_id for b in boundaries] == [-2, -1, 1, 2]
        for boundary in boundaries:
            truth = scene.truth_lateral(boundary.boundary_id)
            error = lateral_rms_error(boundary, lambda s, value=truth: np.full_like(s, value))
            assert error < 0.1, (seed, curvature, boundary.boundary_id, error)


def test_lateral_filter_bounds_are_strict():
    trajectory = _straight_trajectory()
    # lateral d is positive to the right, which is -y on this trajectory
    cases = [
        (1.4, 0.0, 200.0, None),
        (2.2, 0.0, 200.0, None),
        (1.41, 0.0, 200.0, 'right'),
        (2.19, 0.0, 200.0, 'right'),
        (-1.8, 0.0, 200.0, 'left'),
        (-1.0, 0.0, 200.0, None),
        (1.8, 1.5, 200.0, None),
        (1.8, 0.0, 50.0, None),
    ]
    xyz = np.array([[50.0, -d, z] for d, z, _, _ in cases])
    cloud = PointCloud(xyz, np.array([intensity for _, _, intensity, _ in cases]))
    left, right = filter_points(cloud, trajectory, intensity_min=120.0, ground_tol_m=0.3)

    expected_left = xyz[[i for i, case in enumerate(cases) if case[3] == 'left']]
    expected_right = xyz[[i for i, case in enumerate(cases) if case[3] == 'right']]
    np.testing.assert_array_equal(left.xyz, expected_left)
    np.testing.assert_array_equal(right.xyz, expected_right)

    with pytest.raises(ConfigurationError):
        filter_points(cloud, trajectory, lat_min=2.2, lat_max=1.4)


def test_generated_ego_paint_passes_filter():
    config = SceneConfig(frames=0)
    scene = synth_scene(config, CameraModel(), seed=3)
    left, right = filter_points(scene.cloud, scene.trajectory)
    paint_per_boundary = len(np.arange(0.0, config.length_m, config.paint_spacing_m))
    assert len(left) == paint_per_boundary
    assert len(right) == paint_per_boundary


def test_fit_boundary_errors_and_interpolation():
    trajectory = _straight_trajectory()
    with pytest.raises(BoundaryNotFoundError):
        fit_boundary(PointCloud(np.zeros((0, 3)), np.zeros(0)), trajectory, side='left')

    near_start = _paint(trajectory, -1.8).subset(np.arange(400) < 40)
    with pytest.raises(BoundaryNotFoundError):
        fit_boundary(near_start, trajectory)

    paint = _paint(trajectory, 1.7)
    s, _, _ = trajectory.localize(paint.xyz)
    gapped = paint.subset((s < 20.0) | (s >= 25.0))
    boundary = fit_boundary(gapped, trajectory, knot_spacing_m=5.0)
    assert boundary.side == 'right' and boundary.boundary_id == 1
    assert len(boundary.s) == 20
    np.testing.assert_allclose(boundary.lateral, 1.7, atol=1e-9)


def test_replicate_rejects_crossed_boundaries():
    trajectory = _straight_trajectory()
    left = fit_boundary(_paint(trajectory, 1.8), trajectory, side='left')
    right = fit_boundary(_paint(trajectory, -1.8), trajectory, side='right')
    with pytest.raises(BoundaryNotFoundError):
        replicate_boundaries(left, right, trajectory)


def _arc_trajectory(radius: float = 125.0, length: float = 200.0) -> Trajectory:
    s = np.arange(0.0, length + 1e-9, 1.0)
    heading = s / radius
    x, y = radius * np.sin(heading), radius * (1.0 - np.cos(heading))
    return Trajectory(np.column_stack([s / 25.0, x, y, np.zeros_like(s), heading]))


def test_replicated_boundaries_step_by_lane_width():
    trajectory = _straight_trajectory()
    left = fit_boundary(_paint(trajectory, -1.8), trajectory, side='left')
    right = fit_boundary(_paint(trajectory, 1.8), trajectory, side='right')
    boundaries = replicate_boundaries(left, right, trajectory, n_left=2, n_right=2)

    assert [b.boundary_id for b in boundaries] == [-3, -2, -1, 1, 2, 3]
    for boundary, lateral in zip(boundaries, (-9.0, -(1.8 + 3.6), -1.8, 1.8, 1.8 + 3.6, 9.0)):
        np.testing.assert_allclose(boundary.lateral, lateral, atol=1e-9)
        # d is positive to the right, which is -y here
        np.testing.assert_allclose(boundary.points[:, 1], -lateral, atol=1e-9)


def test_replicated_curves_keep_lane_width_pointwise():
    trajectory = _arc_trajectory()
    left = fit_boundary(_paint(trajectory, -1.8), trajectory, side='left')
    right = fit_boundary(_paint(trajectory, 1.8), trajectory, side='right')
    boundaries = replicate_boundaries(left, right, trajectory, n_left=2, n_right=2)
    width = float(np.mean(np.interp(left.s, right.s, right.lateral) - left.lateral))
    assert width == pytest.approx(3.6, abs=0.05)

    by_id = {b.boundary_id: b for b in boundaries}
    for inner, outer in ((-1, -2), (-2, -3), (1, 2), (2, 3)):
        a, b = by_id[inner], by_id[outer]
        np.testing.assert_array_equal(a.s, b.s)
        gaps = np.linalg.norm(b.points - a.points, axis=1)
        assert np.abs(gaps - width).max() <= 1e-3
        heading = trajectory.heading_at(a.s)
        step = b.points[:, :2] - a.points[:, :2]
        along = step[:, 0] * np.cos(heading) + step[:, 1] * np.sin(heading)
        assert np.abs(along).max() <= 1e-9


def test_corrections_move_single_knots(tmp_path):
    trajectory = _straight_trajectory()
    left = fit_boundary(_paint(trajectory, -1.8), trajectory, side='left')
    right = fit_boundary(_paint(trajectory, 1.8), trajectory, side='right')
    boundaries = replicate_boundaries(left, right, trajectory, n_left=0, n_right=0)

    path = tmp_path / 'corrections.json'
    path.write_text(json.dumps([{'boundary_id': -1, 'knot_index': 2, 'x': 12.5, 'y': 2.0, 'z': 0.0}]))
    corrected = apply_corrections(boundaries, load_corrections(str(path)), trajectory)
    moved = corrected[0]
    assert moved.lateral[2] == pytest.approx(-2.0)
    assert moved.s[2] == pytest.approx(12.5)
    np.testing.assert_allclose(np.delete(moved.lateral, 2), -1.8, atol=1e-9)

    with pytest.raises(ConfigurationError):
        apply_corrections(boundaries, [{'boundary_id': 5, 'knot_index': 0, 'x': 0, 'y': 0, 'z': 0}], trajectory)
    path.write_text(json.dumps([{'boundary_id': -1, 'knot_index': 2}]))
    with pytest.raises(ConfigurationError):
        load_corrections(str(path))


def test_cuboid_box_matches_analytic_projection():
    cam = CameraModel(focal=500.0, cx=320.0, cy=240.0, height=1.5)
    box = cuboid_box(_vehicle(20.0, 0.0), (0.0, 0.0, 0.0, 0.0), cam, (640, 480))
    expected = (320.0 - 500.0 * 0.9 / 20.0, 240.0, 320.0 + 500.0 * 0.9 / 20.0, 240.0 + 500.0 * 1.5 / 20.0)
    np.testing.assert_allclose(box.rect, expected, atol=1e-9)
    assert box.depth == pytest.approx(20.0)
    assert cuboid_box(_vehicle(0.5, 0.0), (0.0, 0.0, 0.0, 0.0), cam, (640, 480)) is None
    assert cuboid_box(_vehicle(20.0, 40.0), (0.0, 0.0, 0.0, 0.0), cam, (640, 480)) is None


def test_rendered_vehicle_within_one_pixel_of_label():
    """Rendered vehicle pixels reproject to the labelled box within 1 px"""
    cam = CameraModel(focal=500.0, cx=320.0, cy=240.0, height=1.5)
    config = SceneConfig(vehicles=0, frames=0)
    vehicle = _vehicle(30.0, 0.0, color=(200, 40, 40))
    pose = (0.0, 0.0, 0.0, 0.0)
    image = render_frame(config, pose, 0.0, [vehicle], cam)
    box = cuboid_box(vehicle, pose, cam, (config.image_width, config.image_height))

    painted = np.all(image == (200, 40, 40), axis=2) | np.all(image == (140, 28, 28), axis=2)
    rows, cols = np.nonzero(painted)
    assert len(rows) > 0
    assert abs(cols.min() - box.x1) <= 1.0 and abs(cols.max() + 1 - box.x2) <= 1.0
    assert abs(rows.min() - box.y1) <= 1.0 and abs(rows.max() + 1 - box.y2) <= 1.0


def test_project_labels_keeps_occluded_knots():
    cam = CameraModel(focal=500.0, cx=320.0, cy=240.0, height=1.5)
    config = SceneConfig(vehicles=0, frames=0)
    boundaries = truth_boundaries(config)
    pose = (0.0, 0.0, 0.0, 0.0)
    labels, lanes3d = project_labels(boundaries, [_vehicle(20.0, 0.0)], pose, cam, (640, 480))

    assert len(labels.vehicles) == 1
    ego_left = next(lane for lane in labels.lanes if lane.boundary_index == -1)
    assert ego_left.depths.min() >= 3.0
    assert np.all(np.diff(ego_left.depths) > 0)
    # the ego-lane vehicle at 20 m hides the left boundary beyond about 40 m
    assert ego_left.occluded[ego_left.depths > 40.5].all()
    assert not ego_left.occluded[ego_left.depths < 39.5].any()
    assert all(np.all(points[:, 0] > 0) for points in lanes3d.values())


def test_cloud_files(tmp_path):
    rng = np.random.default_rng(0)
    cloud = PointCloud(rng.uniform(-50, 50, (100, 3)), rng.uniform(0, 255, 100))
    binary = tmp_path / 'cloud.hpkc'
    write_cloud_binary(str(binary), cloud)
    loaded = read_cloud(str(binary))
    np.testing.assert_allclose(loaded.xyz, cloud.xyz, rtol=1e-6)
    np.testing.assert_allclose(loaded.intensity, cloud.intensity, rtol=1e-6)
    assert binary.stat().st_size == 12 + 16 * 100

    binary.write_bytes(binary.read_bytes()[:-4])
    with pytest.raises(ConfigurationError):
        read_cloud(str(binary))

    csv_path = tmp_path / 'cloud.csv'
    write_cloud_csv(str(csv_path), cloud)
    np.testing.assert_allclose(read_cloud(str(csv_path)).xyz, cloud.xyz, atol=1e-6)
    csv_path.write_text("x,y,intensity\n1,2,3\n")
    with pytest.raises(ConfigurationError):
        read_cloud(str(csv_path))

    trajectory = _straight_trajectory(10.0)
    write_trajectory(str(tmp_path / 'trajectory.csv'), trajectory)
    assert read_trajectory(str(tmp_path / 'trajectory.csv')).length == pytest.approx(10.0)


def test_trajectory_validation():
    with pytest.raises(ConfigurationError):
        Trajectory(np.zeros((1, 5)))
    with pytest.raises(ConfigurationError):
        Trajectory(np.zeros((3, 5)))


def test_run_autolabel_on_written_scene(tmp_path):
    config = load_run_config(DESK_CONFIG)
    config = dataclasses.replace(config, scenes=1, synth=dataclasses.replace(config.synth, frames=2))
    run_synth(config, str(tmp_path), show_progress=False)
    scene_dir = str(tmp_path / scene_dir_name(config.seed))

    result = run_autolabel(config, scene_dir)
    assert sorted(result.rms_error) == [-2, -1, 1, 2]
    assert max(result.rms_error.values()) < 0.1
    assert result.manifest is not None and os.path.exists(result.manifest)


def main():
    """Run all tests"""
    import tempfile
    from pathlib import Path

    print("\n" + "=" * 60)
    print("Auto-labeling tests")
    print("=" * 60)

    tests = [value for name, value in sorted(globals().items()) if name.startswith('test_') and callable(value)]
    for test in tests:
        if 'tmp_path' in test.__code__.co_varnames[:test.__code__.co_argcount]:
            with tempfile.TemporaryDirectory() as tmp:
                test(Path(tmp))
        else:
            test()
        print(f"  ok  {test.__name__}")

    print("\n" + "=" * 60)
    print(f"All {len(tests)} tests passed!")
    print("=" * 60)


if __name__ == "__main__":
    main()
