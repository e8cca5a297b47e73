"""
Lane boundary extraction from a point-cloud map and the ego trajectory
"""
import json
import logging
import os
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from autolabel.pointcloud import PointCloud, Trajectory
from config import GROUND_TOL_M, INTENSITY_MIN, KNOT_SPACING_M, LATERAL_MAX_M, LATERAL_MIN_M
from exceptions import BoundaryNotFoundError, ConfigurationError

logger = logging.getLogger(__name__)

MAX_EMPTY_BIN_FRACTION = 0.5


@dataclass
class BoundaryPolyline:
    """
    Piecewise linear lane boundary in the map frame

    Attributes:
        side: 'left' or 'right' of the ego trajectory
        offset_index: Signed lane multiple, -1/+1 for the ego lane
        points: (K, 3) knots ordered by arc length
        s: (K,) arc length of each knot along the trajectory
        lateral: (K,) signed lateral offset of each knot
    """

    side: str
    offset_index: int
    points: np.ndarray
    s: np.ndarray
    lateral: np.ndarray

    def __post_init__(self):
        if self.side not in ('left', 'right'):
            raise ConfigurationError(f"Boundary side must be 'left' or 'right', got {self.side!r}")
        if self.offset_index == 0:
            raise ConfigurationError("Boundary offset_index must be non-zero")
        if np.any(np.diff(self.s) < 0):
            raise ConfigurationError("Boundary knots must be ordered by arc length")

    @property
    def boundary_id(self) -> int:
        return self.offset_index

    def to_dict(self) -> Dict[str, Any]:
        return {
            'boundary_id': self.offset_index,
            'side': self.side,
            'points': self.points.tolist(),
            's': self.s.tolist(),
            'lateral': self.lateral.tolist(),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'BoundaryPolyline':
        return cls(
            side=data['side'],
            offset_index=int(data['boundary_id']),
            points=np.asarray(data['points'], dtype=np.float64).reshape(-1, 3),
            s=np.asarray(data['s'], dtype=np.float64),
            lateral=np.asarray(data['lateral'], dtype=np.float64),
        )


def filter_points(
    cloud: PointCloud,
    trajectory: Trajectory,
    intensity_min: float = INTENSITY_MIN,
    ground_tol_m: float = GROUND_TOL_M,
    lat_min: float = LATERAL_MIN_M,
    lat_max: float = LATERAL_MAX_M,
) -> Tuple[PointCloud, PointCloud]:
    """
    Candidate lane paint points on either side of the ego lane

    Keeps points with intensity >= intensity_min, height within ground_tol_m
    of the trajectory ground, and lat_min < |d| < lat_max where d is the
    signed lateral distance to the trajectory. Points projecting beyond the
    trajectory ends are dropped.

    Returns:
        Tuple of (left set with d < 0, right set with d > 0)
    """
    if not 0 <= lat_min < lat_max:
        raise ConfigurationError(f"Lateral bounds must satisfy 0 <= min < max, got {lat_min}, {lat_max}")
    if len(cloud) == 0:
        empty = cloud.subset(np.zeros(0, dtype=bool))
        return empty, empty

    s, d, inside = trajectory.localize(cloud.xyz)
    height = cloud.xyz[:, 2] - trajectory.ground_z(s)
    keep = (
        inside
        & (cloud.intensity >= intensity_min)
        & (np.abs(height) <= ground_tol_m)
        & (np.abs(d) > lat_min)
        & (np.abs(d) < lat_max)
    )
    left, right = cloud.subset(keep & (d < 0)), cloud.subset(keep & (d > 0))
    for name, subset in (('left', left), ('right', right)):
        if len(subset) == 0:
            logger.warning(f"No candidate points for the {name} boundary")
    logger.info(f"Kept {len(left)} left and {len(right)} right candidates of {len(cloud)} points")
    return left, right


def fit_boundary(
    points: PointCloud,
    trajectory: Trajectory,
    knot_spacing_m: float = KNOT_SPACING_M,
    side: Optional[str] = None,
) -> BoundaryPolyline:
    """
    Fit a piecewise linear boundary to candidate points

    Points are binned by arc length (bin width knot_spacing_m) over the
    trajectory; each knot sits at its bin's center with the median lateral
    offset of the bin. Empty bins are interpolated from their neighbours.

    Raises:
        BoundaryNotFoundError: No points, or more than half of the bins empty
    """
    if knot_spacing_m <= 0:
        raise ConfigurationError(f"knot_spacing_m must be > 0, got {knot_spacing_m}")
    if len(points) == 0:
        raise BoundaryNotFoundError(f"No candidate points for the {side or 'requested'} boundary")

    s, d, _ = trajectory.localize(points.xyz)
    if side is None:
        side = 'left' if np.median(d) < 0 else 'right'

    n_bins = max(int(np.ceil(trajectory.length / knot_spacing_m)), 1)
    edges = np.minimum(np.arange(n_bins + 1) * knot_spacing_m, trajectory.length)
    centers = (edges[:-1] + edges[1:]) / 2.0
    index = np.clip(np.searchsorted(edges, s, side='right') - 1, 0, n_bins - 1)

    lateral = np.full(n_bins, np.nan)
    for b in np.unique(index):
        lateral[b] = np.median(d[index == b])
    empty = np.isnan(lateral)
    if np.count_nonzero(empty) > MAX_EMPTY_BIN_FRACTION * n_bins:
        raise BoundaryNotFoundError(
            f"{side} boundary: {int(np.count_nonzero(empty))} of {n_bins} bins have no points"
        )
    if empty.any():
        logger.info(f"{side} boundary: interpolated {int(np.count_nonzero(empty))} empty bins")
        lateral[empty] = np.interp(centers[empty], centers[~empty], lateral[~empty])

    return BoundaryPolyline(
        side=side,
        offset_index=-1 if side == 'left' else 1,
        points=trajectory.point_at(centers, lateral),
        s=centers,
        lateral=lateral,
    )


def replicate_boundaries(
    left: BoundaryPolyline,
    right: BoundaryPolyline,
    trajectory: Trajectory,
    n_left: int = 1,
    n_right: int = 1,
) -> List[BoundaryPolyline]:
    """
    Add boundaries of neighbouring lanes by offsetting the ego boundaries

    The lane width w is the mean lateral separation of the ego pair. Boundary
    k lanes further out is the ego boundary offset by k * w along the
    trajectory normal.

    Returns:
        All boundaries ordered from leftmost to rightmost
    """
    if n_left < 0 or n_right < 0:
        raise ConfigurationError("Lane counts must be >= 0")
    right_lateral = np.interp(left.s, right.s, right.lateral)
    width = float(np.mean(right_lateral - left.lateral))
    if width <= 0:
        raise BoundaryNotFoundError(f"Ego boundaries cross (mean width {width:.3f} m)")

    def offset(base: BoundaryPolyline, k: int, sign: int, side: str) -> BoundaryPolyline:
        lateral = base.lateral + sign * k * width
        return BoundaryPolyline(
            side=side,
            offset_index=sign * (k + 1),
            points=trajectory.point_at(base.s, lateral),
            s=base.s.copy(),
            lateral=lateral,
        )

    outer_left = [offset(left, k, -1, 'left') for k in range(n_left, 0, -1)]
    outer_right = [offset(right, k, 1, 'right') for k in range(1, n_right + 1)]
    return outer_left + [left, right] + outer_right


# ---------------------------------------------------------------------------
# Knot corrections
# ---------------------------------------------------------------------------

CORRECTION_KEYS = {'boundary_id', 'knot_index', 'x', 'y', 'z'}


def load_corrections(path: str) -> List[Dict[str, Any]]:
    """Read a JSON array of {boundary_id, knot_index, x, y, z}"""
    if not os.path.exists(path):
        raise FileNotFoundError(f"Corrections file not found: {path}")
    with open(path, 'r', encoding='utf-8') as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"{path}: {e}")
    if not isinstance(data, list):
        raise ConfigurationError(f"{path}: expected a JSON array")
    for i, entry in enumerate(data):
        if not isinstance(entry, dict) or set(entry) != CORRECTION_KEYS:
            raise ConfigurationError(f"{path}: entry {i} must have exactly the keys {sorted(CORRECTION_KEYS)}")
    return data


def apply_corrections(
    boundaries: Sequence[BoundaryPolyline],
    corrections: Sequence[Dict[str, Any]],
    trajectory: Trajectory,
) -> List[BoundaryPolyline]:
    """
    Override individual knots, as a human annotator would

    The arc length and lateral offset of a moved knot are recomputed from
    its new position.
    """
    by_id = {b.offset_index: b for b in boundaries}
    for entry in corrections:
        boundary = by_id.get(int(entry['boundary_id']))
        if boundary is None:
            raise ConfigurationError(f"Correction names unknown boundary {entry['boundary_id']}")
        k = int(entry['knot_index'])
        if not 0 <= k < len(boundary.points):
            raise ConfigurationError(f"Correction knot {k} outside boundary {boundary.offset_index}")
        position = np.array([float(entry['x']), float(entry['y']), float(entry['z'])])
        s, d, _ = trajectory.localize(position[np.newaxis])
        boundary.points[k] = position
        boundary.s[k] = s[0]
        boundary.lateral[k] = d[0]
        order = np.argsort(boundary.s, kind='stable')
        boundary.points, boundary.s, boundary.lateral = boundary.points[order], boundary.s[order], boundary.lateral[order]
    logger.info(f"Applied {len(corrections)} knot corrections")
    return list(boundaries)


def lateral_rms_error(boundary: BoundaryPolyline, truth_lateral) -> float:
    """RMS lateral error of a boundary against a truth function of arc length"""
    return float(np.sqrt(np.mean((boundary.lateral - truth_lateral(boundary.s)) ** 2)))
