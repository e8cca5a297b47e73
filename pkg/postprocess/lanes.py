"""
Lane post-processing: DBSCAN over lifted segment midpoints, spline linking
"""
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from sklearn.cluster import DBSCAN

from detector.types import LaneSegmentDet
from exceptions import ConfigurationError, DomainError
from postprocess.camera import CameraModel, ipm_points
from postprocess.merge import cluster_labels

logger = logging.getLogger(__name__)

NOISE = -1


@dataclass
class Lane:
    """
    One lane boundary assembled from segments

    Attributes:
        id: Cluster id
        segments: Member segments, oriented near to far and sorted by depth
        knots: (K, 3) pixel knots (u, v, depth_m)
        polyline3d: (K, 3) knots lifted to the vehicle frame
    """

    id: int
    segments: List[LaneSegmentDet] = field(default_factory=list)
    knots: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    polyline3d: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))

    def to_dict(self) -> dict:
        return {'id': self.id, 'knots': [[float(u), float(v), float(d)] for u, v, d in self.knots]}


def segment_midpoints(segments: Sequence[LaneSegmentDet], cam: CameraModel) -> Tuple[np.ndarray, np.ndarray]:
    """
    3D midpoints of segments lifted by their endpoint depths

    Returns:
        Tuple of ((n, 3) midpoints, (n,) mask of segments that could be lifted);
        rows of unliftable segments are NaN
    """
    midpoints = np.full((len(segments), 3), np.nan)
    liftable = np.zeros(len(segments), dtype=bool)
    for i, seg in enumerate(segments):
        try:
            ends = ipm_points(np.array([seg.p_a, seg.p_b]), np.array([seg.depth_a, seg.depth_b]), cam)
        except DomainError:
            continue
        midpoints[i] = ends.mean(axis=0)
        liftable[i] = True
    return midpoints, liftable


def dbscan_segments(
    points: np.ndarray,
    eps_m: float = 2.0,
    min_pts: int = 3,
    longitudinal_scale: float = 1.0,
) -> np.ndarray:
    """
    Density clustering of segment midpoints

    Neighborhoods contain the point itself and every point within eps_m.
    The forward axis is multiplied by ``longitudinal_scale`` before distances
    are taken.

    Args:
        points: (n, 3) midpoints in the vehicle frame
        eps_m: Neighborhood radius in meters
        min_pts: Neighborhood size of a core point
        longitudinal_scale: Weight of the forward axis

    Returns:
        (n,) cluster labels, NOISE (-1) for noise
    """
    if eps_m <= 0 or min_pts < 1 or longitudinal_scale <= 0:
        raise ConfigurationError("DBSCAN needs eps_m > 0, min_pts >= 1 and longitudinal_scale > 0")
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(points) == 0:
        return np.zeros(0, dtype=np.int64)
    scaled = points.copy()
    scaled[:, 0] *= longitudinal_scale
    labels = DBSCAN(eps=eps_m, min_samples=min_pts, metric='euclidean', algorithm='brute').fit_predict(scaled)
    return labels.astype(np.int64)


def _oriented(seg: LaneSegmentDet) -> LaneSegmentDet:
    if seg.depth_a <= seg.depth_b:
        return seg
    return LaneSegmentDet(seg.xb, seg.yb, seg.xa, seg.ya, seg.depth_b, seg.depth_a, seg.score)


def collapse_segments(segments: Sequence[LaneSegmentDet], tol_px: float = 2.0) -> List[LaneSegmentDet]:
    """
    Average groups of near-identical segments

    Segments whose four endpoint coordinates all agree within ``tol_px``
    (after orienting them near to far) form one group.
    """
    oriented = [_oriented(seg) for seg in segments]
    if len(oriented) < 2:
        return oriented
    values = np.array([[s.xa, s.ya, s.xb, s.yb, s.depth_a, s.depth_b, s.score] for s in oriented])
    coords = values[:, :4]
    similar = np.all(np.abs(coords[:, np.newaxis, :] - coords[np.newaxis, :, :]) <= tol_px, axis=2)
    labels = cluster_labels(similar)
    collapsed = []
    for label in range(int(labels.max()) + 1):
        group = values[labels == label]
        xa, ya, xb, yb, depth_a, depth_b = group[:, :6].mean(axis=0)
        if (xa, ya) == (xb, yb):
            continue
        collapsed.append(LaneSegmentDet(xa, ya, xb, yb, depth_a, depth_b, float(group[:, 6].max())))
    return collapsed


def link_spline(segments: Sequence[LaneSegmentDet], cam: Optional[CameraModel] = None, lane_id: int = 0) -> Lane:
    """
    Connect a cluster of segments into a C0 polyline

    Segments are oriented near to far and sorted by mean depth; the end of
    each segment and the start of the next are averaged into a shared knot.

    Args:
        segments: One cluster of segments
        cam: Camera used to lift the knots; without it polyline3d stays empty
        lane_id: Id of the resulting lane

    Returns:
        Lane with len(segments) + 1 knots
    """
    if not segments:
        raise ConfigurationError("link_spline needs at least one segment")
    oriented = sorted(
        (_oriented(seg) for seg in segments),
        key=lambda s: ((s.depth_a + s.depth_b) / 2.0, s.xa, s.ya, s.xb, s.yb, s.depth_a, s.depth_b),
    )
    knots = [(oriented[0].xa, oriented[0].ya, oriented[0].depth_a)]
    for current, following in zip(oriented[:-1], oriented[1:]):
        knots.append((
            (current.xb + following.xa) / 2.0,
            (current.yb + following.ya) / 2.0,
            (current.depth_b + following.depth_a) / 2.0,
        ))
    knots.append((oriented[-1].xb, oriented[-1].yb, oriented[-1].depth_b))
    knots = np.array(knots, dtype=np.float64)

    polyline = np.zeros((0, 3))
    if cam is not None:
        polyline = ipm_points(knots[:, :2], knots[:, 2], cam)
    return Lane(id=lane_id, segments=list(oriented), knots=knots, polyline3d=polyline)


def cluster_lanes(
    segments: Sequence[LaneSegmentDet],
    cam: CameraModel,
    eps_m: float = 2.0,
    min_pts: int = 3,
    longitudinal_scale: float = 1.0,
    collapse_px: float = 2.0,
) -> List[Lane]:
    """
    Lane candidates to lanes: lift, cluster, collapse duplicates, link

    Returns:
        Lanes ordered by cluster id; noise segments are discarded
    """
    if not segments:
        return []
    midpoints, liftable = segment_midpoints(segments, cam)
    if not liftable.all():
        logger.debug(f"Dropped {int(np.count_nonzero(~liftable))} segments that cannot be lifted")
    kept = [seg for seg, ok in zip(segments, liftable) if ok]
    labels = dbscan_segments(midpoints[liftable], eps_m, min_pts, longitudinal_scale)

    lanes = []
    for label in sorted(set(labels.tolist()) - {NOISE}):
        members = [seg for seg, member in zip(kept, labels == label) if member]
        members = collapse_segments(members, collapse_px)
        if not members:
            continue
        try:
            lanes.append(link_spline(members, cam, lane_id=len(lanes)))
        except DomainError:
            logger.debug(f"Cluster {label} has knots that cannot be lifted")
    return lanes
