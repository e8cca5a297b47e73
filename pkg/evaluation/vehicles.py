"""
Vehicle detection evaluation: IOU matching, depth-binned reports, radar baseline, depth accuracy
"""
import math
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from config import DEPTH_BIN_M, IOU_MIN
from detector.types import Rect, VehicleBox
from evaluation.report import MODE_RECALL_ONLY, EvalReport
from exceptions import ConfigurationError


def iou(a: Rect, b: Rect) -> float:
    """Intersection over union of two (x1, y1, x2, y2) rects"""
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union > 0 else 0.0


@dataclass
class MatchResult:
    """One frame's one-to-one matching; pairs hold (pred index, gt index, iou)"""

    preds: List[VehicleBox]
    gts: List[VehicleBox]
    pairs: List[Tuple[int, int, float]] = field(default_factory=list)

    @property
    def tp(self) -> int:
        return len(self.pairs)

    @property
    def fp(self) -> int:
        return len(self.preds) - len(self.pairs)

    @property
    def fn(self) -> int:
        return len(self.gts) - len(self.pairs)

    def unmatched_preds(self) -> List[int]:
        taken = {p for p, _, _ in self.pairs}
        return [i for i in range(len(self.preds)) if i not in taken]

    def unmatched_gts(self) -> List[int]:
        taken = {g for _, g, _ in self.pairs}
        return [i for i in range(len(self.gts)) if i not in taken]

    def depth_pairs(self) -> List[Tuple[float, float]]:
        """(predicted depth, true depth) of every matched pair"""
        return [(self.preds[p].depth, self.gts[g].depth) for p, g, _ in self.pairs]


def match_vehicles(preds: Sequence[VehicleBox], gts: Sequence[VehicleBox], iou_min: float = IOU_MIN) -> MatchResult:
    """
    Greedy one-to-one matching in descending IOU

    Candidate pairs need IOU >= iou_min. Ties go to the lower gt index,
    then the lower prediction index.
    """
    candidates = []
    for p, pred in enumerate(preds):
        for g, gt in enumerate(gts):
            overlap = iou(pred.rect, gt.rect)
            if overlap >= iou_min:
                candidates.append((-overlap, g, p))
    candidates.sort()

    result = MatchResult(list(preds), list(gts))
    used_p, used_g = set(), set()
    for negative, g, p in candidates:
        if p in used_p or g in used_g:
            continue
        used_p.add(p)
        used_g.add(g)
        result.pairs.append((p, g, -negative))
    return result


def depth_bin_id(depth: float, bin_width_m: float) -> str:
    low = math.floor(depth / bin_width_m) * bin_width_m
    return f"{low:g}-{low + bin_width_m:g}"


def _bin_low(bin_id: str) -> float:
    return float(bin_id.split('-')[0])


def vehicle_report_by_depth(
    results: Iterable[MatchResult],
    bin_width_m: float = DEPTH_BIN_M,
    metadata: Optional[Dict[str, Any]] = None,
) -> EvalReport:
    """
    Detection counts binned by depth

    True positives and false negatives fall into the bin of the ground
    truth depth, false positives into the bin of the predicted depth.
    Bins without counts are omitted.
    """
    if bin_width_m <= 0:
        raise ConfigurationError(f"bin_width_m must be > 0, got {bin_width_m}")
    report = EvalReport('vehicles', metadata={'bin_width_m': bin_width_m, **(metadata or {})})
    for result in results:
        for _, g, _ in result.pairs:
            report.bin(depth_bin_id(result.gts[g].depth, bin_width_m)).add(tp=1)
        for g in result.unmatched_gts():
            report.bin(depth_bin_id(result.gts[g].depth, bin_width_m)).add(fn=1)
        for p in result.unmatched_preds():
            report.bin(depth_bin_id(result.preds[p].depth, bin_width_m)).add(fp=1)
    return report.sort_bins(key=lambda record: _bin_low(record.bin_id))


def radar_baseline(
    radar_returns: Sequence[Any],
    gts: Sequence[VehicleBox],
    bin_width_m: float = DEPTH_BIN_M,
) -> EvalReport:
    """
    Recall-only radar comparison

    Every return is matched to the ground truth box with the nearest center
    in the image, whatever the overlap. A ground truth box hit by at least
    one return counts as a true positive; the rest are false negatives.
    Precision is forced to 1, so F1 equals recall.

    Args:
        radar_returns: Objects with ``u`` and ``v`` pixel attributes
        gts: Ground truth boxes of the frame
        bin_width_m: Depth bin width
    """
    report = EvalReport('radar', metadata={'bin_width_m': bin_width_m}, mode=MODE_RECALL_ONLY)
    hit = np.zeros(len(gts), dtype=bool)
    if gts:
        centers = np.array([gt.center for gt in gts])
        for ret in radar_returns:
            distance = np.hypot(centers[:, 0] - ret.u, centers[:, 1] - ret.v)
            hit[int(np.argmin(distance))] = True
    for gt, matched in zip(gts, hit):
        record = report.bin(depth_bin_id(gt.depth, bin_width_m))
        if matched:
            record.add(tp=1)
        else:
            record.add(fn=1)
    return report.sort_bins(key=lambda record: _bin_low(record.bin_id))


@dataclass
class DepthBin:
    """Depth error statistics of one bin; stderr is None when fewer than 2 samples"""

    bin_id: str
    n: int
    mean_error: float
    stddev: Optional[float]
    stderr: Optional[float]

    @property
    def flagged(self) -> bool:
        return self.stderr is None

    def to_dict(self) -> Dict[str, Any]:
        return {
            'bin_id': self.bin_id, 'n': self.n, 'mean_error': self.mean_error,
            'stddev': self.stddev, 'stderr': self.stderr, 'flagged': self.flagged,
        }


def depth_error_stats(pairs: Iterable[Tuple[float, float]], bin_width_m: float = DEPTH_BIN_M) -> List[DepthBin]:
    """
    Standard error of predicted depth per true-depth bin

    stderr = sample stddev (n - 1) of (pred - true) / sqrt(n). Bins with a
    single sample are flagged and carry no stddev or stderr.

    Args:
        pairs: (predicted depth, true depth)
        bin_width_m: Bin width in meters

    Returns:
        DepthBins ordered by depth
    """
    errors: Dict[str, List[float]] = {}
    for predicted, true in pairs:
        errors.setdefault(depth_bin_id(true, bin_width_m), []).append(predicted - true)
    bins = []
    for bin_id in sorted(errors, key=_bin_low):
        values = np.array(errors[bin_id], dtype=np.float64)
        if len(values) < 2:
            bins.append(DepthBin(bin_id, len(values), float(values.mean()), None, None))
            continue
        stddev = float(values.std(ddof=1))
        bins.append(DepthBin(bin_id, len(values), float(values.mean()), stddev, stddev / math.sqrt(len(values))))
    return bins
