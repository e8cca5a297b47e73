"""
Dataset evaluation: vehicle, radar and lane reports from detections and ground truth
"""
import json
import logging
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Sequence

from detector.types import VehicleBox
from evaluation.lanes import BOUNDARY_NAMES, LaneEvalGrid, lane_eval
from evaluation.report import MODE_RECALL_ONLY, EvalReport
from evaluation.vehicles import (
    DepthBin,
    MatchResult,
    depth_error_stats,
    match_vehicles,
    radar_baseline,
    vehicle_report_by_depth,
)
from pipeline.dataset import FrameRecord
from pipeline.infer import lane_polyline
from pipeline.run_config import RunConfig

logger = logging.getLogger(__name__)

EGO_BOUNDARIES = (-1, 1)
EGO_RANGE_M = 50.0


@dataclass
class EvaluationResult:
    """All reports of one evaluation run"""

    vehicles: EvalReport
    radar: EvalReport
    lanes: EvalReport
    lane_boundaries: Dict[str, EvalReport]
    lane_grid: LaneEvalGrid
    depth_stats: List[DepthBin] = field(default_factory=list)
    matches: List[MatchResult] = field(default_factory=list)

    def ego_lane_report(self, max_distance: float = EGO_RANGE_M) -> EvalReport:
        """Counts of the ego boundaries up to ``max_distance``"""
        report = EvalReport('lanes_ego', metadata={'max_distance_m': max_distance})
        for name in (BOUNDARY_NAMES[b] for b in EGO_BOUNDARIES):
            source = self.lane_boundaries.get(name)
            if source is None:
                continue
            for record in source.bins:
                if float(record.bin_id.rstrip('m')) <= max_distance:
                    report.bin(f"{name}@{record.bin_id}").add(record.tp, record.fp, record.fn)
        return report

    def to_dict(self) -> Dict[str, Any]:
        return {
            'vehicles': self.vehicles.to_dict(),
            'radar': self.radar.to_dict(),
            'lanes': self.lanes.to_dict(),
            'lanes_ego': self.ego_lane_report().to_dict(),
            'lane_boundaries': {name: report.to_dict() for name, report in self.lane_boundaries.items()},
            'depth_error': [stat.to_dict() for stat in self.depth_stats],
        }

    def write(self, out_dir: str) -> List[str]:
        """Write every report as JSON and CSV; returns the paths written"""
        os.makedirs(out_dir, exist_ok=True)
        written = []
        reports = [self.vehicles, self.radar, self.lanes, self.ego_lane_report(), *self.lane_boundaries.values()]
        for report in reports:
            for ext, writer in (('json', report.write_json), ('csv', report.write_csv)):
                path = os.path.join(out_dir, f"{report.name}.{ext}")
                writer(path)
                written.append(path)
        path = os.path.join(out_dir, 'depth_error.json')
        with open(path, 'w', encoding='utf-8') as f:
            json.dump([stat.to_dict() for stat in self.depth_stats], f, indent=2, sort_keys=True)
        written.append(path)
        return written


def _predicted_vehicles(detection: Mapping[str, Any]) -> List[VehicleBox]:
    return [VehicleBox.from_dict(box) for box in detection.get('vehicles', [])]


def run_eval(
    config: RunConfig,
    records: Sequence[FrameRecord],
    detections: Sequence[Mapping[str, Any]],
    out_dir: Optional[str] = None,
) -> EvaluationResult:
    """
    Evaluate detections against the ground truth of a dataset

    Frames without detections count every ground truth as missed. Lane
    predictions are lifted to the vehicle frame with the frame's camera and
    compared with the record's vehicle-frame boundaries.

    Args:
        config: Run configuration (thresholds and cameras)
        records: Ground truth frames
        detections: Parsed detection lines (see infer.read_detections)
        out_dir: Report directory (not written when None)

    Returns:
        EvaluationResult
    """
    thresholds = config.thresholds
    by_frame = {detection['frame_id']: detection for detection in detections}
    unknown = sorted(set(by_frame) - {record.frame_id for record in records})
    if unknown:
        logger.warning(f"Ignoring detections of {len(unknown)} frames not in the dataset")

    matches: List[MatchResult] = []
    radar_reports: List[EvalReport] = []
    grids: List[LaneEvalGrid] = []
    for record in records:
        detection = by_frame.get(record.frame_id)
        if detection is None:
            logger.warning(f"No detections for frame {record.frame_id}")
            detection = {'vehicles': [], 'lanes': []}

        matches.append(match_vehicles(_predicted_vehicles(detection), record.vehicles, thresholds.iou_min))
        radar_reports.append(radar_baseline(record.radar, record.vehicles, thresholds.depth_bin_m))

        cam = config.camera(record.camera_id)
        predicted = [lane_polyline(lane['knots'], cam) for lane in detection.get('lanes', [])]
        grids.append(lane_eval(predicted, record.lanes3d, tol_m=thresholds.lane_tol_m))

    metadata = {'dataset_frames': len(records), 'config': config.name}
    vehicles = vehicle_report_by_depth(matches, thresholds.depth_bin_m, metadata={
        **metadata, 'iou_min': thresholds.iou_min,
    })
    radar = EvalReport.merge_all(
        radar_reports, 'radar', metadata={**metadata, 'bin_width_m': thresholds.depth_bin_m}, mode=MODE_RECALL_ONLY,
    ).sort_bins(key=lambda record: float(record.bin_id.split('-')[0]))
    grid = LaneEvalGrid.merge_all(grids)
    lanes = grid.to_report(thresholds.lane_tol_m)
    lanes.metadata.update(metadata)

    result = EvaluationResult(
        vehicles=vehicles,
        radar=radar,
        lanes=lanes,
        lane_boundaries=grid.boundary_reports(thresholds.lane_tol_m),
        lane_grid=grid,
        depth_stats=depth_error_stats(
            [pair for match in matches for pair in match.depth_pairs()], thresholds.depth_bin_m
        ),
        matches=matches,
    )
    summary = vehicles.summary().metrics()
    logger.info(
        f"Vehicles F1 {summary['f1']:.3f}, lanes F1 {lanes.summary().metrics()['f1']:.3f}, "
        f"radar recall {radar.summary().metrics(MODE_RECALL_ONLY)['recall']:.3f}"
    )
    if out_dir:
        result.write(out_dir)
    return result
