"""
Lane evaluation at fixed longitudinal distances of the four scored boundaries
"""
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from config import LANE_EVAL_BOUNDARIES, LANE_EVAL_DISTANCES_M, LANE_TOL_M
from evaluation.report import EvalReport
from exceptions import ConfigurationError

BOUNDARY_NAMES = {-2: 'left_outer', -1: 'ego_left', 1: 'ego_right', 2: 'right_outer'}
# outcomes of predictions at distances without any ground truth boundary
UNMATCHED_BOUNDARY = 0


def sample_lateral(polyline: np.ndarray, x: float) -> Optional[float]:
    """
    Lateral position of a vehicle-frame polyline at forward distance x

    Linear interpolation between the first pair of consecutive knots that
    brackets x. None when the polyline does not reach x.
    """
    polyline = np.asarray(polyline, dtype=np.float64).reshape(-1, 3)
    if len(polyline) == 0:
        return None
    if len(polyline) == 1:
        return float(polyline[0, 1]) if polyline[0, 0] == x else None
    xs, ys = polyline[:, 0], polyline[:, 1]
    for i in range(len(polyline) - 1):
        x0, x1 = xs[i], xs[i + 1]
        if min(x0, x1) <= x <= max(x0, x1):
            if x0 == x1:
                return float(ys[i])
            t = (x - x0) / (x1 - x0)
            return float(ys[i] + t * (ys[i + 1] - ys[i]))
    return None


@dataclass
class LaneEvalGrid:
    """
    tp/fp/fn counts at every (boundary, distance) position

    ``unmatched_fp`` counts, per distance, predictions found where no ground
    truth boundary reaches.
    """

    boundaries: Tuple[int, ...] = LANE_EVAL_BOUNDARIES
    distances: Tuple[float, ...] = LANE_EVAL_DISTANCES_M
    tp: np.ndarray = field(default=None)
    fp: np.ndarray = field(default=None)
    fn: np.ndarray = field(default=None)
    unmatched_fp: np.ndarray = field(default=None)

    def __post_init__(self):
        self.boundaries = tuple(self.boundaries)
        self.distances = tuple(self.distances)
        shape = (len(self.boundaries), len(self.distances))
        for name in ('tp', 'fp', 'fn'):
            value = getattr(self, name)
            setattr(self, name, np.zeros(shape, dtype=np.int64) if value is None else np.asarray(value, dtype=np.int64))
            if getattr(self, name).shape != shape:
                raise ConfigurationError(f"LaneEvalGrid {name} must have shape {shape}")
        if self.unmatched_fp is None:
            self.unmatched_fp = np.zeros(len(self.distances), dtype=np.int64)
        self.unmatched_fp = np.asarray(self.unmatched_fp, dtype=np.int64)
        if self.unmatched_fp.shape != (len(self.distances),):
            raise ConfigurationError(f"LaneEvalGrid unmatched_fp must have shape ({len(self.distances)},)")

    @property
    def positions(self) -> int:
        return len(self.boundaries) * len(self.distances)

    def merge(self, other: 'LaneEvalGrid') -> 'LaneEvalGrid':
        if other.boundaries != self.boundaries or other.distances != self.distances:
            raise ConfigurationError("Cannot merge lane grids with different positions")
        return LaneEvalGrid(
            self.boundaries, self.distances, self.tp + other.tp, self.fp + other.fp, self.fn + other.fn,
            self.unmatched_fp + other.unmatched_fp,
        )

    @classmethod
    def merge_all(cls, grids: Iterable['LaneEvalGrid'], **kwargs) -> 'LaneEvalGrid':
        total = cls(**kwargs)
        for grid in grids:
            total = total.merge(grid)
        return total

    def _bin_id(self, boundary: int, distance: float) -> str:
        return f"{BOUNDARY_NAMES.get(boundary, boundary)}@{distance:g}m"

    def to_report(self, tol_m: float = LANE_TOL_M, max_distance: Optional[float] = None) -> EvalReport:
        """One bin per position plus an ``unmatched`` bin per distance with stray predictions"""
        report = EvalReport('lanes', metadata={'tol_m': tol_m, 'max_distance_m': max_distance})
        for i, boundary in enumerate(self.boundaries):
            for j, distance in enumerate(self.distances):
                if max_distance is not None and distance > max_distance:
                    continue
                report.bin(self._bin_id(boundary, distance)).add(
                    int(self.tp[i, j]), int(self.fp[i, j]), int(self.fn[i, j])
                )
        for j, distance in enumerate(self.distances):
            if self.unmatched_fp[j] and (max_distance is None or distance <= max_distance):
                report.bin(f"unmatched@{distance:g}m").add(0, int(self.unmatched_fp[j]), 0)
        return report

    def boundary_reports(self, tol_m: float = LANE_TOL_M) -> Dict[str, EvalReport]:
        """One report per scored boundary with a bin per distance"""
        reports = {}
        for i, boundary in enumerate(self.boundaries):
            name = BOUNDARY_NAMES.get(boundary, str(boundary))
            report = EvalReport(f"lanes_{name}", metadata={'tol_m': tol_m, 'boundary_id': boundary})
            for j, distance in enumerate(self.distances):
                report.bin(f"{distance:g}m").add(int(self.tp[i, j]), int(self.fp[i, j]), int(self.fn[i, j]))
            reports[name] = report
        return reports


@dataclass(frozen=True)
class LanePointOutcome:
    """One counted event at a position; lateral is where it is drawn in the top view"""

    boundary: int
    distance: float
    kind: str
    lateral: float


def match_lane_points(
    pred_lanes: Sequence[np.ndarray],
    gt_boundaries: Mapping[int, np.ndarray],
    tol_m: float = LANE_TOL_M,
    boundaries: Tuple[int, ...] = LANE_EVAL_BOUNDARIES,
    distances: Tuple[float, ...] = LANE_EVAL_DISTANCES_M,
) -> List[LanePointOutcome]:
    """
    Per-position greedy nearest-neighbour pairing of sampled lateral positions

    At each distance, every curve is sampled laterally; curves that do not
    reach the distance are absent. Predictions and all ground truth
    boundaries present there are paired greedily by smallest lateral error.
    A pair closer than tol_m is a true positive of the ground truth's
    boundary; a farther pair counts a false positive and a false negative.
    An unpaired ground truth is a false negative; an unpaired prediction is
    a false positive of the nearest ground truth, or of UNMATCHED_BOUNDARY
    when no ground truth reaches the distance. Only the boundaries in
    ``boundaries`` and UNMATCHED_BOUNDARY are counted.
    """
    scored = set(boundaries)
    outcomes: List[LanePointOutcome] = []
    for x in distances:
        gts = [(boundary, sample_lateral(line, x)) for boundary, line in sorted(gt_boundaries.items())]
        gts = [(boundary, y) for boundary, y in gts if y is not None]
        preds = [y for y in (sample_lateral(line, x) for line in pred_lanes) if y is not None]

        candidates = sorted(
            (abs(p_y - g_y), g, p) for p, p_y in enumerate(preds) for g, (_, g_y) in enumerate(gts)
        )
        used_p, used_g = set(), set()
        for error, g, p in candidates:
            if p in used_p or g in used_g:
                continue
            used_p.add(p)
            used_g.add(g)
            boundary, g_y = gts[g]
            if boundary not in scored:
                continue
            if error < tol_m:
                outcomes.append(LanePointOutcome(boundary, x, 'tp', preds[p]))
            else:
                outcomes.append(LanePointOutcome(boundary, x, 'fp', preds[p]))
                outcomes.append(LanePointOutcome(boundary, x, 'fn', g_y))

        for g, (boundary, g_y) in enumerate(gts):
            if g not in used_g and boundary in scored:
                outcomes.append(LanePointOutcome(boundary, x, 'fn', g_y))
        for p, p_y in enumerate(preds):
            if p in used_p:
                continue
            if not gts:
                outcomes.append(LanePointOutcome(UNMATCHED_BOUNDARY, x, 'fp', p_y))
                continue
            nearest = min(range(len(gts)), key=lambda g: (abs(gts[g][1] - p_y), g))
            boundary = gts[nearest][0]
            if boundary in scored:
                outcomes.append(LanePointOutcome(boundary, x, 'fp', p_y))
    return outcomes


def lane_eval(
    pred_lanes: Sequence[np.ndarray],
    gt_boundaries: Mapping[int, np.ndarray],
    tol_m: float = LANE_TOL_M,
    boundaries: Tuple[int, ...] = LANE_EVAL_BOUNDARIES,
    distances: Tuple[float, ...] = LANE_EVAL_DISTANCES_M,
) -> LaneEvalGrid:
    """
    Score predicted lanes at every (boundary, distance) position

    Args:
        pred_lanes: Predicted (K, 3) polylines in the vehicle frame
        gt_boundaries: Ground truth (K, 3) polylines by boundary id
        tol_m: Lateral tolerance
        boundaries: Scored boundary ids
        distances: Forward distances in meters

    Returns:
        LaneEvalGrid for one frame
    """
    grid = LaneEvalGrid(boundaries, distances)
    row = {boundary: i for i, boundary in enumerate(grid.boundaries)}
    column = {distance: j for j, distance in enumerate(grid.distances)}
    counts = {'tp': grid.tp, 'fp': grid.fp, 'fn': grid.fn}
    for outcome in match_lane_points(pred_lanes, gt_boundaries, tol_m, grid.boundaries, grid.distances):
        if outcome.boundary == UNMATCHED_BOUNDARY:
            grid.unmatched_fp[column[outcome.distance]] += 1
            continue
        counts[outcome.kind][row[outcome.boundary], column[outcome.distance]] += 1
    return grid
