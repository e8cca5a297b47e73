"""
Projection of map-frame labels into per-frame pixel ground truth
"""
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from autolabel.boundaries import BoundaryPolyline
from autolabel.pointcloud import map_to_vehicle
from detector.types import FrameLabels, GroundTruthLane, VehicleBox
from postprocess.camera import CameraModel, project

logger = logging.getLogger(__name__)

Pose = Tuple[float, float, float, float]

DEFAULT_SAMPLE_STEP_M = 0.5
DEFAULT_SEGMENT_PX = 8.0
DEFAULT_MIN_DEPTH_M = 3.0
DEFAULT_MAX_DEPTH_M = 100.0


@dataclass
class Cuboid:
    """Vehicle body as 8 map-frame corners; the first four form the rear face"""

    corners: np.ndarray
    color: Tuple[int, int, int] = (200, 40, 40)


def resample_polyline(points: np.ndarray, step: float) -> np.ndarray:
    """Points every ``step`` meters along a 3D polyline, ends included"""
    points = np.asarray(points, dtype=np.float64)
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    arc = np.concatenate([[0.0], np.cumsum(seg)])
    if arc[-1] == 0:
        return points[:1]
    samples = np.append(np.arange(0.0, arc[-1], step), arc[-1])
    return np.stack([np.interp(samples, arc, points[:, k]) for k in range(3)], axis=1)


def boundary_in_vehicle_frame(
    boundary: BoundaryPolyline,
    pose: Pose,
    step: float = DEFAULT_SAMPLE_STEP_M,
    max_depth: float = DEFAULT_MAX_DEPTH_M,
) -> np.ndarray:
    """Densified boundary in the vehicle frame, ahead of the vehicle and within max_depth"""
    dense = map_to_vehicle(resample_polyline(boundary.points, step), pose)
    keep = (dense[:, 0] > 0) & (dense[:, 0] <= max_depth)
    return dense[keep]


def _longest_run(mask: np.ndarray) -> slice:
    best, start, best_slice = 0, None, slice(0, 0)
    for i, flag in enumerate(np.append(mask, False)):
        if flag and start is None:
            start = i
        elif not flag and start is not None:
            if i - start > best:
                best, best_slice = i - start, slice(start, i)
            start = None
    return best_slice


def _pick_knots(uv: np.ndarray, spacing_px: float) -> np.ndarray:
    """Indices of knots at least ``spacing_px`` apart along the image curve, ends kept"""
    picks = [0]
    travelled = 0.0
    for i in range(1, len(uv)):
        travelled += float(np.hypot(*(uv[i] - uv[i - 1])))
        if travelled >= spacing_px:
            picks.append(i)
            travelled = 0.0
    if picks[-1] != len(uv) - 1:
        picks.append(len(uv) - 1)
    return np.array(picks)


def cuboid_box(
    cuboid: Cuboid,
    pose: Pose,
    cam: CameraModel,
    image_size: Tuple[int, int],
    min_depth: float = 1.0,
) -> Optional[VehicleBox]:
    """
    Image box of a cuboid: bounding rect of its projected corners clipped to the image

    Depth is the forward distance of the nearest corner. Cuboids reaching
    closer than ``min_depth`` or fully outside the image give None.
    """
    corners = map_to_vehicle(cuboid.corners, pose)
    if np.any(corners[:, 0] < min_depth):
        return None
    uv, _ = project(corners, cam)
    width, height = image_size
    x1, y1 = max(uv[:, 0].min(), 0.0), max(uv[:, 1].min(), 0.0)
    x2, y2 = min(uv[:, 0].max(), float(width)), min(uv[:, 1].max(), float(height))
    if x2 <= x1 or y2 <= y1:
        return None
    return VehicleBox(float(x1), float(y1), float(x2), float(y2), depth=float(corners[:, 0].min()))


def project_labels(
    boundaries: Sequence[BoundaryPolyline],
    vehicles: Sequence[Cuboid],
    pose: Pose,
    cam: CameraModel,
    image_size: Tuple[int, int],
    segment_px: float = DEFAULT_SEGMENT_PX,
    min_depth: float = DEFAULT_MIN_DEPTH_M,
    max_depth: float = DEFAULT_MAX_DEPTH_M,
) -> Tuple[FrameLabels, Dict[int, np.ndarray]]:
    """
    Pixel ground truth of one frame

    Boundaries are sampled densely in the vehicle frame, points closer than
    ``min_depth`` (or behind the camera) and outside the image are culled,
    and the longest visible run is thinned to knots about ``segment_px``
    apart. Knots hidden behind a nearer vehicle keep their place and are
    flagged as occluded.

    Args:
        boundaries: Map-frame boundaries
        vehicles: Map-frame vehicle cuboids
        pose: Ego pose (x, y, z, heading)
        cam: Camera model
        image_size: (width, height)
        segment_px: Target knot spacing along the image curve
        min_depth: Nearest forward distance labelled
        max_depth: Farthest forward distance labelled

    Returns:
        Tuple of (pixel labels, vehicle-frame boundary polylines by boundary id).
        The 3D polylines are not culled to the image.
    """
    width, height = image_size
    boxes = [box for box in (cuboid_box(c, pose, cam, image_size) for c in vehicles) if box is not None]

    lanes: List[GroundTruthLane] = []
    lanes3d: Dict[int, np.ndarray] = {}
    for boundary in boundaries:
        dense = boundary_in_vehicle_frame(boundary, pose, max_depth=max_depth)
        lanes3d[boundary.offset_index] = dense
        near_enough = dense[dense[:, 0] >= min_depth]
        if len(near_enough) < 2:
            continue
        uv, _ = project(near_enough, cam)
        in_image = (uv[:, 0] >= 0) & (uv[:, 0] < width) & (uv[:, 1] >= 0) & (uv[:, 1] < height)
        run = _longest_run(in_image)
        if run.stop - run.start < 2:
            logger.debug(f"Boundary {boundary.offset_index} is outside the field of view")
            continue
        uv, depth = uv[run], near_enough[run, 0]
        knots = _pick_knots(uv, segment_px)
        uv, depth = uv[knots], depth[knots]

        occluded = np.zeros(len(uv), dtype=bool)
        for box in boxes:
            inside = (uv[:, 0] >= box.x1) & (uv[:, 0] <= box.x2) & (uv[:, 1] >= box.y1) & (uv[:, 1] <= box.y2)
            occluded |= inside & (depth > box.depth)
        lanes.append(GroundTruthLane(uv, depth, occluded, boundary_index=boundary.offset_index))

    return FrameLabels(vehicles=boxes, lanes=lanes), lanes3d
