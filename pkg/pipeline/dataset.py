"""
Frame datasets: JSON-lines manifests and binary PPM images
"""
import json
import logging
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image

from autolabel.synth import RadarReturn
from detector.types import FrameLabels, GroundTruthLane, VehicleBox
from exceptions import ConfigurationError
from pipeline.run_config import DEFAULT_CAMERA_ID

logger = logging.getLogger(__name__)

RECORD_KEYS = {'frame_id', 'image', 'vehicles', 'lanes', 'camera_id', 'pose', 'lanes3d', 'radar'}


@dataclass
class FrameRecord:
    """
    One annotated frame of a manifest

    Attributes:
        frame_id: Unique id within the manifest
        image: Path of the PPM image (absolute once loaded)
        vehicles: Vehicle boxes with depth
        lanes: Lane polylines in pixels with per-knot depth
        camera_id: Key into RunConfig.cameras
        pose: Ego pose (x, y, z, heading) in the map frame, if known
        lanes3d: Vehicle-frame boundary polylines by boundary id, for lane evaluation
        radar: Radar returns of the frame
    """

    frame_id: str
    image: str
    vehicles: List[VehicleBox] = field(default_factory=list)
    lanes: List[GroundTruthLane] = field(default_factory=list)
    camera_id: str = DEFAULT_CAMERA_ID
    pose: Optional[Tuple[float, float, float, float]] = None
    lanes3d: Dict[int, np.ndarray] = field(default_factory=dict)
    radar: List[RadarReturn] = field(default_factory=list)

    @property
    def labels(self) -> FrameLabels:
        return FrameLabels(vehicles=list(self.vehicles), lanes=list(self.lanes))

    def to_dict(self, base_dir: Optional[str] = None) -> Dict[str, Any]:
        image = os.path.relpath(self.image, base_dir) if base_dir else self.image
        data: Dict[str, Any] = {
            'frame_id': self.frame_id,
            'image': image.replace(os.sep, '/'),
            'camera_id': self.camera_id,
            'vehicles': [box.to_dict() for box in self.vehicles],
            'lanes': [lane.to_dict() for lane in self.lanes],
        }
        if self.pose is not None:
            data['pose'] = [float(v) for v in self.pose]
        if self.lanes3d:
            data['lanes3d'] = {
                str(boundary_id): np.round(points, 6).tolist() for boundary_id, points in sorted(self.lanes3d.items())
            }
        if self.radar:
            data['radar'] = [[r.u, r.v, r.depth] for r in self.radar]
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any], base_dir: str = '') -> 'FrameRecord':
        if not isinstance(data, dict):
            raise ConfigurationError("frame record must be a JSON object")
        unknown = sorted(set(data) - RECORD_KEYS)
        if unknown:
            raise ConfigurationError(f"unknown keys {unknown}")
        for key in ('frame_id', 'image'):
            if not isinstance(data.get(key), str) or not data[key]:
                raise ConfigurationError(f"missing or empty {key!r}")
        try:
            pose = data.get('pose')
            if pose is not None:
                if len(pose) != 4:
                    raise ConfigurationError("pose must be [x, y, z, heading]")
                pose = tuple(float(v) for v in pose)
            return cls(
                frame_id=data['frame_id'],
                image=os.path.normpath(os.path.join(base_dir, data['image'])),
                vehicles=[VehicleBox.from_dict(box) for box in data.get('vehicles', [])],
                lanes=[GroundTruthLane.from_dict(lane) for lane in data.get('lanes', [])],
                camera_id=str(data.get('camera_id', DEFAULT_CAMERA_ID)),
                pose=pose,
                lanes3d={
                    int(key): np.asarray(points, dtype=np.float64).reshape(-1, 3)
                    for key, points in data.get('lanes3d', {}).items()
                },
                radar=[RadarReturn(float(u), float(v), float(d)) for u, v, d in data.get('radar', [])],
            )
        except (KeyError, TypeError, ValueError) as e:
            if isinstance(e, ConfigurationError):
                raise
            raise ConfigurationError(f"malformed record: {e}")


def load_dataset(manifest_path: str, check_files: bool = True) -> List[FrameRecord]:
    """
    Read a JSON-lines manifest

    Image paths are resolved against the manifest's directory. Blank lines
    are skipped.

    Args:
        manifest_path: Path of the manifest
        check_files: Require every referenced image to exist

    Returns:
        FrameRecords in file order

    Raises:
        FileNotFoundError: If the manifest is missing
        ConfigurationError: For a malformed line, naming its line number
    """
    if not os.path.exists(manifest_path):
        raise FileNotFoundError(f"Manifest not found: {manifest_path}")
    base_dir = os.path.dirname(os.path.abspath(manifest_path))
    records: List[FrameRecord] = []
    seen = set()
    with open(manifest_path, 'r', encoding='utf-8') as f:
        for line_number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = FrameRecord.from_dict(json.loads(line), base_dir)
            except json.JSONDecodeError as e:
                raise ConfigurationError(f"{manifest_path}:{line_number}: invalid JSON: {e.msg}")
            except ConfigurationError as e:
                raise ConfigurationError(f"{manifest_path}:{line_number}: {e}")
            if record.frame_id in seen:
                raise ConfigurationError(f"{manifest_path}:{line_number}: duplicate frame_id {record.frame_id!r}")
            if check_files and not os.path.exists(record.image):
                raise ConfigurationError(f"{manifest_path}:{line_number}: image not found: {record.image}")
            seen.add(record.frame_id)
            records.append(record)
    logger.info(f"Loaded {len(records)} frames from {manifest_path}")
    return records


def write_manifest(manifest_path: str, records: Sequence[FrameRecord]):
    """Write records as JSON lines with image paths relative to the manifest"""
    base_dir = os.path.dirname(os.path.abspath(manifest_path))
    os.makedirs(base_dir, exist_ok=True)
    with open(manifest_path, 'w', encoding='utf-8') as f:
        for record in records:
            f.write(json.dumps(record.to_dict(base_dir), sort_keys=True) + '\n')


def read_image(path: str) -> np.ndarray:
    """(H, W, 3) uint8 array of an image file"""
    if not os.path.exists(path):
        raise FileNotFoundError(f"Image not found: {path}")
    with Image.open(path) as image:
        return np.asarray(image.convert('RGB'), dtype=np.uint8).copy()


def write_image(path: str, image: np.ndarray):
    """Write an (H, W, 3) uint8 array as binary PPM"""
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    Image.fromarray(np.asarray(image, dtype=np.uint8), mode='RGB').save(path, format='PPM')


def to_network_input(image: np.ndarray) -> np.ndarray:
    """(H, W, 3) uint8 to float32 (3, H, W) in [0, 1]"""
    return np.ascontiguousarray(np.transpose(image, (2, 0, 1)), dtype=np.float32) / np.float32(255.0)


def resize_frame(image: np.ndarray, labels: FrameLabels, size: Tuple[int, int]) -> Tuple[np.ndarray, FrameLabels]:
    """
    Resize an image to (width, height) with bilinear sampling and scale its labels

    Depths are unchanged.
    """
    height, width = image.shape[:2]
    if (width, height) == tuple(size):
        return image, labels
    sx, sy = size[0] / width, size[1] / height
    resized = resize_image(image, size)
    vehicles = [
        VehicleBox(box.x1 * sx, box.y1 * sy, box.x2 * sx, box.y2 * sy, box.depth, box.score)
        for box in labels.vehicles
    ]
    lanes = [
        GroundTruthLane(lane.points * np.array([sx, sy]), lane.depths, lane.occluded, lane.boundary_index)
        for lane in labels.lanes
    ]
    return resized, FrameLabels(vehicles=vehicles, lanes=lanes)


def resize_image(image: np.ndarray, size: Tuple[int, int]) -> np.ndarray:
    """Bilinear resize of an (H, W, 3) uint8 image to (width, height)"""
    height, width = image.shape[:2]
    if (width, height) == tuple(size):
        return image
    return np.asarray(Image.fromarray(image).resize(tuple(size), Image.BILINEAR), dtype=np.uint8)
