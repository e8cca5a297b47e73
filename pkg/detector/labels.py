"""
Ground truth rasterization into per-cell mask and regression labels
"""
import logging
from typing import Sequence

import numpy as np

from detector.types import (
    CLASS_BACKGROUND,
    CLASS_LANE,
    CLASS_VEHICLE,
    LANE_REG,
    VEHICLE_REG,
    GridLabel,
    GroundTruthLane,
    Rect,
    VehicleBox,
)
from exceptions import ConfigurationError
from geometry.cells import GridGeometry

logger = logging.getLogger(__name__)

DEFAULT_SHRINK = 0.75
DEFAULT_LANE_HALF_WIDTH = 2.0


def shrink_box(rect: Rect, factor: float = DEFAULT_SHRINK) -> Rect:
    """
    Scale width and height to (1 - factor) about the rect center

    Args:
        rect: (x1, y1, x2, y2)
        factor: Fraction of each side removed, in [0, 1]

    Returns:
        Shrunk rect
    """
    if not 0.0 <= factor <= 1.0:
        raise ConfigurationError(f"Shrink factor must be in [0, 1], got {factor}")
    x1, y1, x2, y2 = rect
    if x2 < x1 or y2 < y1:
        raise ConfigurationError(f"Invalid rect {rect}")
    cx, cy = (x1 + x2) / 2.0, (y1 + y2) / 2.0
    half_w = (x2 - x1) * (1.0 - factor) / 2.0
    half_h = (y2 - y1) * (1.0 - factor) / 2.0
    return cx - half_w, cy - half_h, cx + half_w, cy + half_h


def _normal_distance(px: np.ndarray, py: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Distance from points to segment [a, b] along its normal; inf where the foot falls outside it"""
    d = b - a
    length = float(np.hypot(d[0], d[1]))
    t = ((px - a[0]) * d[0] + (py - a[1]) * d[1]) / (length * length)
    normal = np.abs((px - a[0]) * d[1] - (py - a[1]) * d[0]) / length
    return np.where((t >= 0.0) & (t <= 1.0), normal, np.inf)


def rasterize_labels(
    boxes: Sequence[VehicleBox],
    lanes: Sequence[GroundTruthLane],
    geometry: GridGeometry,
    shrink: float = DEFAULT_SHRINK,
    lane_half_width: float = DEFAULT_LANE_HALF_WIDTH,
) -> GridLabel:
    """
    Build the cell grid label of one frame

    A cell is vehicle-active when its 4x4 region lies inside a shrunk box;
    the regression target is the unshrunk box and its depth. When shrunk
    boxes overlap, the box whose center is nearest to the cell center wins.
    A cell is lane-active when its center lies in the strip of a lane
    segment: its foot point falls on the segment and its distance along the
    segment normal is at most ``lane_half_width``. The strip is shrunk along
    the normal only, so ``lane_half_width`` is the half width after
    shrinking. The target is that segment's endpoints and depths. Vehicle cells take precedence over lane cells.

    Args:
        boxes: Vehicle ground truth in pixels
        lanes: Lane ground truth in pixels
        geometry: Cell grid of the network input
        shrink: Shrink factor applied to every box
        lane_half_width: Shrunk strip half width along the segment normal, in pixels

    Returns:
        GridLabel of shape geometry.shape
    """
    rows, cols = geometry.shape
    size = geometry.cell_size
    valid = geometry.valid_mask()
    cx, cy = geometry.centers()
    x0 = cx - size / 2.0
    y0 = cy - size / 2.0

    cell_class = np.full((rows, cols), CLASS_BACKGROUND, dtype=np.int64)
    vehicle_reg = np.zeros((VEHICLE_REG, rows, cols), dtype=np.float64)
    lane_reg = np.zeros((LANE_REG, rows, cols), dtype=np.float64)
    lane_occluded = np.zeros((rows, cols), dtype=bool)

    # Vehicles: containment in the shrunk box, nearest center on overlap
    best_dist = np.full((rows, cols), np.inf)
    dropped = 0
    for box in boxes:
        sx1, sy1, sx2, sy2 = shrink_box(box.rect, shrink)
        inside = valid & (x0 >= sx1) & (x0 + size <= sx2) & (y0 >= sy1) & (y0 + size <= sy2)
        if not inside.any():
            dropped += 1
            continue
        bx, by = box.center
        dist = np.hypot(cx - bx, cy - by)
        claim = inside & (dist < best_dist)
        best_dist[claim] = dist[claim]
        cell_class[claim] = CLASS_VEHICLE
        vehicle_reg[:, claim] = np.array([box.x1, box.y1, box.x2, box.y2, box.depth])[:, np.newaxis]
    if dropped:
        logger.info(f"{dropped} of {len(boxes)} boxes too small to activate a cell after shrinking")

    # Lanes: strip around every local segment, nearest segment wins
    lane_dist = np.full((rows, cols), np.inf)
    free = valid & (cell_class == CLASS_BACKGROUND)
    for lane in lanes:
        for index, a, b, depth_a, depth_b in lane.segments():
            dist = _normal_distance(cx, cy, a, b)
            claim = free & (dist <= lane_half_width) & (dist < lane_dist)
            if not claim.any():
                continue
            lane_dist[claim] = dist[claim]
            cell_class[claim] = CLASS_LANE
            lane_reg[:, claim] = np.array([a[0], a[1], b[0], b[1], depth_a, depth_b])[:, np.newaxis]
            lane_occluded[claim] = bool(lane.occluded[index] or lane.occluded[index + 1])

    return GridLabel(
        cell_class=cell_class,
        vehicle_reg=vehicle_reg,
        lane_reg=lane_reg,
        valid=valid,
        lane_occluded=lane_occluded,
        dropped_boxes=dropped,
    )
