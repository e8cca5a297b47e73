"""
Inference: forward pass, candidate extraction, box merging and lane clustering per frame
"""
import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from detector.heads import forward_detect
from detector.types import LaneSegmentDet, RegressionCodec, VehicleBox
from exceptions import ConfigurationError
from geometry.cells import GridGeometry
from nn.checkpoint import load_checkpoint
from nn.network import Network
from pipeline.dataset import FrameRecord, read_image, resize_image, to_network_input
from pipeline.run_config import RunConfig
from pipeline.train import build_detector
from postprocess.camera import CameraModel, ipm_points
from postprocess.candidates import extract_candidates
from postprocess.lanes import Lane, cluster_lanes
from postprocess.merge import merge_boxes

logger = logging.getLogger(__name__)

STAGES = ('forward', 'extract', 'merge', 'lanes')
DETECTION_KEYS = {'frame_id', 'vehicles', 'lanes'}


@dataclass
class FrameDetections:
    """Merged vehicles and linked lanes of one frame, in source image pixels"""

    frame_id: str
    vehicles: List[VehicleBox] = field(default_factory=list)
    lanes: List[Lane] = field(default_factory=list)
    timings: Dict[str, float] = field(default_factory=dict)
    candidates: Tuple[int, int] = (0, 0)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'frame_id': self.frame_id,
            'vehicles': [box.to_dict() for box in self.vehicles],
            'lanes': [lane.to_dict() for lane in self.lanes],
        }


def _scale_box(box: VehicleBox, sx: float, sy: float) -> VehicleBox:
    return VehicleBox(box.x1 * sx, box.y1 * sy, box.x2 * sx, box.y2 * sy, box.depth, box.score)


def _scale_segment(seg: LaneSegmentDet, sx: float, sy: float) -> LaneSegmentDet:
    return LaneSegmentDet(seg.xa * sx, seg.ya * sy, seg.xb * sx, seg.yb * sy, seg.depth_a, seg.depth_b, seg.score)


class DetectionPipeline:
    """
    Full per-frame detector

    The network runs at the configured input size. Candidates are mapped
    back to the source image before merging and lane clustering, and lanes
    are lifted with the source camera of the frame.
    """

    def __init__(self, config: RunConfig, network: Network, geometry: GridGeometry, codec: RegressionCodec):
        self.config = config
        self.network = network
        self.geometry = geometry
        self.codec = codec

    @classmethod
    def from_checkpoint(cls, config: RunConfig, checkpoint_path: str) -> 'DetectionPipeline':
        network, geometry, codec = build_detector(config)
        network.load_parameters(load_checkpoint(checkpoint_path).params)
        return cls(config, network, geometry, codec)

    def detect(self, image: np.ndarray, frame_id: str = '', cam: Optional[CameraModel] = None) -> FrameDetections:
        """
        Detect vehicles and lanes in an (H, W, 3) uint8 image

        Args:
            image: Source frame
            frame_id: Id copied to the result
            cam: Camera of the source frame (the default camera when omitted)

        Returns:
            FrameDetections with per-stage wall-clock times in seconds
        """
        thresholds = self.config.thresholds
        cam = cam or self.config.camera()
        height, width = image.shape[:2]
        size = self.config.image_size
        timings = {}

        start = time.perf_counter()
        grid = forward_detect(to_network_input(resize_image(image, size)), self.network, self.geometry, self.codec)
        timings['forward'] = time.perf_counter() - start

        start = time.perf_counter()
        boxes, segments = extract_candidates(grid, thresholds.activation)
        sx, sy = width / size[0], height / size[1]
        if (sx, sy) != (1.0, 1.0):
            boxes = [_scale_box(box, sx, sy) for box in boxes]
            segments = [_scale_segment(seg, sx, sy) for seg in segments]
        timings['extract'] = time.perf_counter() - start

        start = time.perf_counter()
        vehicles = merge_boxes(boxes, thresholds.merge_params())
        timings['merge'] = time.perf_counter() - start

        start = time.perf_counter()
        lanes = cluster_lanes(
            segments, cam,
            eps_m=thresholds.dbscan_eps_m,
            min_pts=thresholds.dbscan_min_pts,
            longitudinal_scale=thresholds.longitudinal_scale,
            collapse_px=thresholds.collapse_px,
        )
        timings['lanes'] = time.perf_counter() - start

        return FrameDetections(frame_id, vehicles, lanes, timings, (len(boxes), len(segments)))

    def detect_record(self, record: FrameRecord) -> FrameDetections:
        return self.detect(read_image(record.image), record.frame_id, self.config.camera(record.camera_id))


def run_infer(
    config: RunConfig,
    checkpoint_path: str,
    records: Sequence[FrameRecord],
    out_path: Optional[str] = None,
    show_progress: bool = True,
) -> List[FrameDetections]:
    """
    Run the detector over frames and write JSON-lines detections

    Frames are processed by ``config.worker_count`` threads; output order
    is the input order.

    Args:
        config: Run configuration
        checkpoint_path: Trained weights
        records: Frames to process
        out_path: Detections file (not written when None)
        show_progress: Show a progress bar

    Returns:
        FrameDetections in input order
    """
    pipeline = DetectionPipeline.from_checkpoint(config, checkpoint_path)
    workers = config.worker_count
    with ThreadPoolExecutor(max_workers=workers) as executor:
        results = list(tqdm(
            executor.map(pipeline.detect_record, records),
            total=len(records), desc="Detecting", disable=not show_progress,
        ))
    if out_path:
        write_detections(out_path, results)
    n_vehicles = sum(len(r.vehicles) for r in results)
    n_lanes = sum(len(r.lanes) for r in results)
    logger.info(f"Detected {n_vehicles} vehicles and {n_lanes} lanes in {len(results)} frames ({workers} workers)")
    return results


def write_detections(path: str, detections: Sequence[FrameDetections]):
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        for frame in detections:
            f.write(json.dumps(frame.to_dict(), sort_keys=True) + '\n')


def validate_detection(data: Any) -> Dict[str, Any]:
    """Check one parsed detections line against the output schema"""
    if not isinstance(data, dict) or set(data) != DETECTION_KEYS:
        raise ConfigurationError(f"detection record must have exactly the keys {sorted(DETECTION_KEYS)}")
    if not isinstance(data['frame_id'], str):
        raise ConfigurationError("frame_id must be a string")
    for box in data['vehicles']:
        if set(box) != {'x1', 'y1', 'x2', 'y2', 'depth_m', 'score'}:
            raise ConfigurationError(f"malformed vehicle {box}")
        VehicleBox.from_dict(box)
    for lane in data['lanes']:
        if set(lane) != {'id', 'knots'} or not isinstance(lane['id'], int):
            raise ConfigurationError(f"malformed lane {lane}")
        if any(len(knot) != 3 for knot in lane['knots']):
            raise ConfigurationError(f"lane {lane['id']} knots must be [u, v, depth_m]")
    return data


def read_detections(path: str) -> List[Dict[str, Any]]:
    """Parse and validate a detections file"""
    if not os.path.exists(path):
        raise FileNotFoundError(f"Detections not found: {path}")
    records = []
    with open(path, 'r', encoding='utf-8') as f:
        for line_number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                records.append(validate_detection(json.loads(line)))
            except json.JSONDecodeError as e:
                raise ConfigurationError(f"{path}:{line_number}: invalid JSON: {e.msg}")
            except ConfigurationError as e:
                raise ConfigurationError(f"{path}:{line_number}: {e}")
    return records


def lane_polyline(knots: Sequence[Sequence[float]], cam: CameraModel) -> np.ndarray:
    """Vehicle-frame polyline of [u, v, depth_m] knots"""
    knots = np.asarray(knots, dtype=np.float64).reshape(-1, 3)
    if len(knots) == 0:
        return np.zeros((0, 3))
    return ipm_points(knots[:, :2], knots[:, 2], cam)
