"""
Test script for label rasterization, the regression encoding and the detection loss
"""
import sys
import os

# Add parent directory to path
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

import numpy as np
import pytest

from detector.heads import check_output_layout, detection_loss, forward_detect, grid_from_label
from detector.labels import rasterize_labels, shrink_box
from detector.types import (
    CLASS_BACKGROUND,
    CLASS_LANE,
    CLASS_VEHICLE,
    OUTPUT_CHANNELS,
    VEHICLE_SLICE,
    GroundTruthLane,
    RegressionCodec,
    VehicleBox,
)
from evaluation.vehicles import iou
from exceptions import ConfigurationError
from geometry.cells import GridGeometry
from nn.gradcheck import numeric_gradient, relative_error
from nn.layers import LayerSpec
from nn.losses import grid_cross_entropy
from nn.network import Network
from postprocess.candidates import extract_candidates
from postprocess.merge import MergeParams, merge_boxes

LAYERS = [
    LayerSpec('conv', kernel=32, stride=32, padding='same', out_channels=8 * 8 * OUTPUT_CHANNELS),
    LayerSpec('softmax-grid', kernel=8, out_channels=OUTPUT_CHANNELS),
]


def _geometry(size=(128, 96)) -> GridGeometry:
    return GridGeometry.from_layers(LAYERS, size)


def test_shrink_box_keeps_center():
    assert shrink_box((0, 0, 64, 32), 0.75) == (24.0, 12.0, 40.0, 20.0)
    assert shrink_box((10, 10, 20, 20), 0.0) == (10.0, 10.0, 20.0, 20.0)
    with pytest.raises(ConfigurationError):
        shrink_box((0, 0, 10, 10), 1.5)


def test_vehicle_cells_follow_shrink_rule():
    """Only cells inside the central quarter activate; targets keep the full box"""
    geometry = _geometry()
    box = VehicleBox(0.0, 0.0, 64.0, 64.0, depth=20.0)
    label = rasterize_labels([box], [], geometry)
    rows, cols = np.nonzero(label.cell_class == CLASS_VEHICLE)
    assert len(rows) == 16
    assert set(rows.tolist()) == {6, 7, 8, 9} and set(cols.tolist()) == {6, 7, 8, 9}
    np.testing.assert_array_equal(label.vehicle_reg[:, 7, 7], [0.0, 0.0, 64.0, 64.0, 20.0])
    assert label.dropped_boxes == 0


def test_tiny_boxes_are_dropped_and_counted():
    label = rasterize_labels([VehicleBox(10.0, 10.0, 16.0, 16.0, depth=50.0)], [], _geometry())
    assert not label.vehicle_mask.any()
    assert label.dropped_boxes == 1


def test_overlapping_boxes_nearest_center_wins():
    geometry = _geometry()
    a = VehicleBox(0.0, 0.0, 64.0, 64.0, depth=10.0)
    b = VehicleBox(32.0, 0.0, 96.0, 64.0, depth=30.0)
    label = rasterize_labels([a, b], [], geometry, shrink=0.0)
    cx, _ = geometry.centers()
    rows, cols = np.nonzero(label.vehicle_mask)
    assert len(rows) == 16 * 24
    for row, col in zip(rows, cols):
        # centers sit at 4k + 2, never on the midline x = 48
        assert label.vehicle_reg[4, row, col] == (10.0 if cx[row, col] < 48 else 30.0)


def test_lane_cells_and_vehicle_precedence():
    geometry = _geometry()
    lane = GroundTruthLane(points=[[10.0, 90.0], [60.0, 40.0]], depths=[8.0, 30.0], occluded=[False, True])
    label = rasterize_labels([], [lane], geometry, lane_half_width=2.0)
    assert label.lane_mask.any()
    row, col = np.argwhere(label.lane_mask)[0]
    np.testing.assert_array_equal(label.lane_reg[:, row, col], [10.0, 90.0, 60.0, 40.0, 8.0, 30.0])
    assert label.lane_occluded[label.lane_mask].all()

    blocker = VehicleBox(0.0, 0.0, 128.0, 96.0, depth=5.0)
    both = rasterize_labels([blocker], [lane], geometry, shrink=0.0)
    assert not both.lane_mask.any()


def test_lane_strip_is_bounded_along_the_normal():
    """Centers sit at 4k + 2: the strip of y = 50 from x = 20 to 60 holds x = 22..58 only"""
    geometry = _geometry()
    lane = GroundTruthLane(points=[[20.0, 50.0], [60.0, 50.0]], depths=[10.0, 20.0])
    label = rasterize_labels([], [lane], geometry, lane_half_width=2.0)
    cx, cy = geometry.centers()
    assert set(cy[label.lane_mask].tolist()) == {50.0}
    assert sorted(cx[label.lane_mask].tolist()) == [22.0 + 4 * k for k in range(10)]

    a, b = np.array([12.0, 80.0]), np.array([100.0, 14.0])
    slanted = rasterize_labels([], [GroundTruthLane([a, b], [8.0, 40.0])], geometry, lane_half_width=3.0)
    d = b - a
    t = ((cx - a[0]) * d[0] + (cy - a[1]) * d[1]) / (d @ d)
    normal = np.abs((cx - a[0]) * d[1] - (cy - a[1]) * d[0]) / np.hypot(*d)
    expected = geometry.valid_mask() & (t >= 0) & (t <= 1) & (normal <= 3.0)
    assert expected.any()
    np.testing.assert_array_equal(slanted.lane_mask, expected)


def test_lane_annotation_validation():
    with pytest.raises(ConfigurationError):
        GroundTruthLane(points=[[0.0, 0.0]], depths=[5.0])
    with pytest.raises(ConfigurationError):
        GroundTruthLane(points=[[0.0, 0.0], [1.0, 1.0]], depths=[5.0, -1.0])
    with pytest.raises(ConfigurationError):
        VehicleBox(5.0, 0.0, 5.0, 10.0, depth=10.0)


def test_codec_decodes_what_it_encodes():
    geometry = _geometry()
    codec = RegressionCodec(context=355.0)
    cx, cy = geometry.centers()
    rng = np.random.default_rng(0)
    reg = rng.uniform(0, 100, size=(5,) + geometry.shape)
    enc = codec.encode_vehicle(reg, cx, cy)
    assert np.abs(enc[4]).max() <= 1.0
    np.testing.assert_allclose(codec.decode_vehicle(enc, cx, cy), reg, atol=1e-9)


def test_label_round_trip_recovers_boxes():
    """Perfect grid -> candidates -> merge returns every box that activates a cell"""
    geometry = _geometry((256, 192))
    rng = np.random.default_rng(1)
    boxes = []
    for gy in range(3):
        for gx in range(4):
            w, h = rng.uniform(24, 60), rng.uniform(20, 58)
            x1, y1 = gx * 64 + rng.uniform(0, 64 - w), gy * 64 + rng.uniform(0, 64 - h)
            boxes.append(VehicleBox(x1, y1, x1 + w, y1 + h, depth=float(rng.uniform(5, 80))))
    label = rasterize_labels(boxes, [], geometry)
    grid = grid_from_label(label)
    candidates, _ = extract_candidates(grid, threshold=0.5)
    merged = merge_boxes(candidates, MergeParams(eps=0.2, min_group=1))

    expected = len(boxes) - label.dropped_boxes
    assert expected > 0
    assert len(merged) == expected
    for box in merged:
        assert max(iou(box.rect, gt.rect) for gt in boxes) >= 0.99


def test_detection_loss_gradient():
    geometry = _geometry()
    codec = RegressionCodec(context=355.0)
    lane = GroundTruthLane(points=[[70.0, 90.0], [110.0, 50.0]], depths=[8.0, 30.0])
    label = rasterize_labels([VehicleBox(4.0, 4.0, 60.0, 50.0, depth=20.0)], [lane], geometry)
    rng = np.random.default_rng(2)
    output = rng.standard_normal((OUTPUT_CHANNELS,) + geometry.shape)
    for regression in ('l1', 'l2'):
        loss, analytic = detection_loss(output, label, geometry, codec, 0.5, [1.0, 2.0, 3.0], regression)
        assert loss > 0
        numeric = numeric_gradient(
            lambda v: detection_loss(v, label, geometry, codec, 0.5, [1.0, 2.0, 3.0], regression)[0], output
        )
        assert relative_error(analytic, numeric) <= 1e-3


def test_regression_loss_is_in_pixels_and_meters():
    """1 px or 1 m off on one of 16 vehicle cells adds reg_weight / (16 * 5)"""
    geometry = _geometry()
    codec = RegressionCodec(context=355.0)
    label = rasterize_labels([VehicleBox(0.0, 0.0, 64.0, 64.0, depth=20.0)], [], geometry)
    assert int(label.vehicle_mask.sum()) == 16
    cx, cy = geometry.centers()
    perfect = np.zeros((OUTPUT_CHANNELS,) + geometry.shape)
    perfect[VEHICLE_SLICE] = codec.encode_vehicle(label.vehicle_reg, cx, cy)
    base, _ = detection_loss(perfect, label, geometry, codec, reg_weight=0.5)
    row, col = np.argwhere(label.vehicle_mask)[0]

    for channel, step in ((0, 1.0 / 355.0), (4, 1.0 / 100.0)):
        output = perfect.copy()
        output[VEHICLE_SLICE.start + channel, row, col] += step
        shifted, grad = detection_loss(output, label, geometry, codec, reg_weight=0.5)
        assert shifted - base == pytest.approx(0.5 / (16 * 5), rel=1e-6)
        scale = 355.0 if channel == 0 else 100.0
        assert grad[VEHICLE_SLICE.start + channel, row, col] == pytest.approx(0.5 / (16 * 5) * scale)


def test_loss_without_regression_cells_is_cross_entropy():
    geometry = _geometry()
    label = rasterize_labels([], [], geometry)
    output = np.random.default_rng(4).standard_normal((OUTPUT_CHANNELS,) + geometry.shape)
    loss, grad = detection_loss(output, label, geometry, RegressionCodec(), reg_weight=2.0)
    expected, _ = grid_cross_entropy(output[:3], label.cell_class, valid=label.valid)
    assert loss == pytest.approx(expected)
    assert not grad[3:].any()


def test_detection_loss_rejects_shape_mismatch():
    geometry = _geometry()
    label = rasterize_labels([], [], geometry)
    with pytest.raises(ConfigurationError):
        detection_loss(np.zeros((OUTPUT_CHANNELS, 2, 2)), label, geometry, RegressionCodec())
    assert (label.cell_class == CLASS_BACKGROUND).all()


def test_forward_detect_shapes_and_errors():
    geometry = _geometry()
    network = Network(LAYERS, in_channels=3, seed=0)
    check_output_layout(network, geometry)
    image = np.random.default_rng(3).random((3, 96, 128)).astype(np.float32)
    grid = forward_detect(image, network, geometry, RegressionCodec(context=float(geometry.context)))
    assert grid.probs.shape == (3,) + geometry.shape
    np.testing.assert_allclose(grid.probs.sum(axis=0), 1.0)
    with pytest.raises(ConfigurationError):
        forward_detect(image[:, :64], network, geometry, RegressionCodec())

    wrong = Network([LayerSpec('conv', kernel=32, stride=32, padding='same', out_channels=8 * 8 * 3),
                     LayerSpec('softmax-grid', kernel=8, out_channels=3)])
    with pytest.raises(ConfigurationError):
        check_output_layout(wrong, geometry)


def test_grid_from_label_classes():
    geometry = _geometry()
    lane = GroundTruthLane(points=[[70.0, 90.0], [110.0, 50.0]], depths=[8.0, 30.0])
    label = rasterize_labels([VehicleBox(4.0, 4.0, 60.0, 50.0, depth=20.0)], [lane], geometry)
    grid = grid_from_label(label, confidence=0.9)
    np.testing.assert_array_equal(grid.classes(), label.cell_class)
    assert (grid.classes() == CLASS_LANE).any() and (grid.classes() == CLASS_VEHICLE).any()


def main():
    """Run all tests"""
    print("\n" + "=" * 60)
    print("Detector tests")
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
