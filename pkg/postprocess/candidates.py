"""
Candidate extraction: one decoded box or lane segment per active cell
"""
import logging
from typing import List, Tuple

import numpy as np

from detector.types import CLASS_BACKGROUND, CLASS_LANE, CLASS_VEHICLE, DetectionGrid, LaneSegmentDet, VehicleBox

logger = logging.getLogger(__name__)


def extract_candidates(grid: DetectionGrid, threshold: float = 0.5) -> Tuple[List[VehicleBox], List[LaneSegmentDet]]:
    """
    Decode every active cell of a grid

    A cell is active when its argmax class is vehicle or lane and the
    probability of that class exceeds ``threshold``. Cells whose decoded
    geometry is degenerate (empty rect, coincident endpoints, depth <= 0)
    are skipped.

    Args:
        grid: Decoded detector output
        threshold: Activation threshold on the class probability

    Returns:
        Tuple of (vehicle candidates, lane segment candidates) in row-major cell order
    """
    classes = grid.classes()
    confidence = grid.probs.max(axis=0)
    active = grid.valid & (confidence > threshold)

    vehicles: List[VehicleBox] = []
    rows, cols = np.nonzero(active & (classes == CLASS_VEHICLE))
    x1, y1, x2, y2, depth = grid.vehicle_reg[:, rows, cols]
    ok = (x1 < x2) & (y1 < y2) & (depth > 0) & np.isfinite(grid.vehicle_reg[:, rows, cols]).all(axis=0)
    for i in np.flatnonzero(ok):
        vehicles.append(VehicleBox(
            float(x1[i]), float(y1[i]), float(x2[i]), float(y2[i]),
            depth=float(depth[i]), score=float(np.clip(confidence[rows[i], cols[i]], 0.0, 1.0)),
        ))

    lanes: List[LaneSegmentDet] = []
    rows, cols = np.nonzero(active & (classes == CLASS_LANE))
    xa, ya, xb, yb, depth_a, depth_b = grid.lane_reg[:, rows, cols]
    ok = ((xa != xb) | (ya != yb)) & (depth_a > 0) & (depth_b > 0)
    ok &= np.isfinite(grid.lane_reg[:, rows, cols]).all(axis=0)
    for i in np.flatnonzero(ok):
        lanes.append(LaneSegmentDet(
            float(xa[i]), float(ya[i]), float(xb[i]), float(yb[i]),
            depth_a=float(depth_a[i]), depth_b=float(depth_b[i]),
            score=float(np.clip(confidence[rows[i], cols[i]], 0.0, 1.0)),
        ))

    skipped = int(np.count_nonzero(active & (classes != CLASS_BACKGROUND))) - len(vehicles) - len(lanes)
    if skipped:
        logger.debug(f"Skipped {skipped} active cells with degenerate regressions")
    return vehicles, lanes
