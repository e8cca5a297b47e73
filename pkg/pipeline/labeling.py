"""
Dataset production: synthetic scenes on disk and map-based lane auto-labeling
"""
import json
import logging
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from autolabel.boundaries import (
    BoundaryPolyline,
    apply_corrections,
    filter_points,
    fit_boundary,
    lateral_rms_error,
    load_corrections,
    replicate_boundaries,
)
from autolabel.pointcloud import read_cloud, read_trajectory, write_cloud_binary, write_trajectory
from autolabel.projection import Cuboid, project_labels
from autolabel.synth import synth_scene
from exceptions import ConfigurationError
from pipeline.dataset import FrameRecord, load_dataset, read_image, write_image, write_manifest
from pipeline.run_config import DEFAULT_CAMERA_ID, RunConfig

logger = logging.getLogger(__name__)

MANIFEST_NAME = 'manifest.jsonl'
AUTOLABEL_MANIFEST_NAME = 'manifest_autolabel.jsonl'
CLOUD_NAME = 'cloud.hpkc'
TRAJECTORY_NAME = 'trajectory.csv'
VEHICLES_NAME = 'vehicles.json'
TRUTH_NAME = 'truth_boundaries.json'
BOUNDARIES_NAME = 'boundaries.json'


def scene_dir_name(seed: int) -> str:
    return f"scene_{seed:04d}"


def write_boundaries(path: str, boundaries: List[BoundaryPolyline]):
    with open(path, 'w', encoding='utf-8') as f:
        json.dump([b.to_dict() for b in boundaries], f, sort_keys=True)


def read_boundaries(path: str) -> List[BoundaryPolyline]:
    if not os.path.exists(path):
        raise FileNotFoundError(f"Boundaries file not found: {path}")
    with open(path, 'r', encoding='utf-8') as f:
        return [BoundaryPolyline.from_dict(item) for item in json.load(f)]


def write_vehicles(path: str, vehicles: List[Cuboid]):
    with open(path, 'w', encoding='utf-8') as f:
        json.dump([{'corners': v.corners.tolist(), 'color': list(v.color)} for v in vehicles], f, sort_keys=True)


def read_vehicles(path: str) -> List[Cuboid]:
    with open(path, 'r', encoding='utf-8') as f:
        data = json.load(f)
    return [Cuboid(np.asarray(item['corners'], dtype=np.float64).reshape(8, 3), tuple(item['color'])) for item in data]


def run_synth(config: RunConfig, out_dir: str, show_progress: bool = True) -> str:
    """
    Generate ``config.scenes`` synthetic scenes and a combined manifest

    Scene i uses seed ``config.seed + i``. Every scene directory holds the
    point cloud, the trajectory, the vehicle cuboids, the generator's
    boundaries, the rendered frames and a scene manifest.

    Returns:
        Path of the combined manifest
    """
    cam = config.camera(DEFAULT_CAMERA_ID)
    records: List[FrameRecord] = []
    for i in range(config.scenes):
        seed = config.seed + i
        scene = synth_scene(config.synth, cam, seed=seed, show_progress=show_progress)
        scene_dir = os.path.join(out_dir, scene_dir_name(seed))
        os.makedirs(scene_dir, exist_ok=True)
        write_cloud_binary(os.path.join(scene_dir, CLOUD_NAME), scene.cloud)
        write_trajectory(os.path.join(scene_dir, TRAJECTORY_NAME), scene.trajectory)
        write_vehicles(os.path.join(scene_dir, VEHICLES_NAME), scene.vehicles)
        write_boundaries(os.path.join(scene_dir, TRUTH_NAME), scene.boundaries)

        scene_records = []
        for frame in scene.frames:
            image_path = os.path.join(scene_dir, 'images', f"{frame.frame_id}.ppm")
            write_image(image_path, frame.image)
            scene_records.append(FrameRecord(
                frame_id=frame.frame_id,
                image=os.path.abspath(image_path),
                vehicles=frame.labels.vehicles,
                lanes=frame.labels.lanes,
                camera_id=DEFAULT_CAMERA_ID,
                pose=frame.pose,
                lanes3d=frame.lanes3d,
                radar=frame.radar,
            ))
        write_manifest(os.path.join(scene_dir, MANIFEST_NAME), scene_records)
        records.extend(scene_records)

    manifest = os.path.join(out_dir, MANIFEST_NAME)
    write_manifest(manifest, records)
    logger.info(f"Wrote {config.scenes} scenes with {len(records)} frames to {out_dir}")
    return manifest


@dataclass
class AutolabelResult:
    boundaries: List[BoundaryPolyline]
    rms_error: Dict[int, float] = field(default_factory=dict)
    manifest: Optional[str] = None


def run_autolabel(
    config: RunConfig,
    scene_dir: str,
    out_dir: Optional[str] = None,
    corrections_path: Optional[str] = None,
) -> AutolabelResult:
    """
    Lane boundaries of a scene from its point cloud and trajectory

    Candidate paint points are filtered, the ego boundaries fitted and
    replicated to the configured number of lanes, and corrections applied.
    When the scene has generator truth, the RMS lateral error of every
    boundary is reported. When it has a manifest with poses, the fitted
    boundaries are projected into its frames to produce an auto-labeled
    manifest.

    Args:
        config: Run configuration (autolabel section and cameras)
        scene_dir: Directory written by run_synth or laid out the same way
        out_dir: Output directory (scene_dir by default)
        corrections_path: JSON knot corrections

    Returns:
        AutolabelResult
    """
    settings = config.autolabel
    out_dir = out_dir or scene_dir
    os.makedirs(out_dir, exist_ok=True)
    cloud_path = os.path.join(scene_dir, CLOUD_NAME)
    if not os.path.exists(cloud_path):
        cloud_path = os.path.join(scene_dir, 'cloud.csv')
    cloud = read_cloud(cloud_path)
    trajectory = read_trajectory(os.path.join(scene_dir, TRAJECTORY_NAME))

    left_points, right_points = filter_points(
        cloud, trajectory, settings.intensity_min, settings.ground_tol_m,
        settings.lateral_min_m, settings.lateral_max_m,
    )
    left = fit_boundary(left_points, trajectory, settings.knot_spacing_m, side='left')
    right = fit_boundary(right_points, trajectory, settings.knot_spacing_m, side='right')
    boundaries = replicate_boundaries(left, right, trajectory, settings.n_left, settings.n_right)
    if corrections_path:
        boundaries = apply_corrections(boundaries, load_corrections(corrections_path), trajectory)
    write_boundaries(os.path.join(out_dir, BOUNDARIES_NAME), boundaries)
    result = AutolabelResult(boundaries)

    truth_path = os.path.join(scene_dir, TRUTH_NAME)
    if os.path.exists(truth_path):
        truth = {b.offset_index: b for b in read_boundaries(truth_path)}
        for boundary in boundaries:
            reference = truth.get(boundary.offset_index)
            if reference is None:
                continue
            result.rms_error[boundary.offset_index] = lateral_rms_error(
                boundary, lambda s, ref=reference: np.interp(s, ref.s, ref.lateral)
            )
            logger.info(
                f"Boundary {boundary.offset_index}: RMS lateral error "
                f"{result.rms_error[boundary.offset_index]:.3f} m"
            )

    manifest_path = os.path.join(scene_dir, MANIFEST_NAME)
    if os.path.exists(manifest_path):
        result.manifest = _relabel_manifest(config, scene_dir, manifest_path, boundaries, out_dir)
    return result


def _relabel_manifest(
    config: RunConfig,
    scene_dir: str,
    manifest_path: str,
    boundaries: List[BoundaryPolyline],
    out_dir: str,
) -> str:
    """Replace the lane labels of every posed frame by projections of ``boundaries``"""
    vehicles_path = os.path.join(scene_dir, VEHICLES_NAME)
    cuboids = read_vehicles(vehicles_path) if os.path.exists(vehicles_path) else []
    records = load_dataset(manifest_path)
    relabeled = []
    for record in records:
        if record.pose is None:
            raise ConfigurationError(f"Frame {record.frame_id} has no pose to project labels into")
        cam = config.camera(record.camera_id)
        height, width = read_image(record.image).shape[:2]
        labels, lanes3d = project_labels(
            boundaries, cuboids, record.pose, cam, (width, height), segment_px=config.synth.segment_px
        )
        relabeled.append(FrameRecord(
            frame_id=record.frame_id,
            image=record.image,
            vehicles=labels.vehicles if cuboids else record.vehicles,
            lanes=labels.lanes,
            camera_id=record.camera_id,
            pose=record.pose,
            lanes3d=lanes3d,
            radar=record.radar,
        ))
    path = os.path.join(out_dir, AUTOLABEL_MANIFEST_NAME)
    write_manifest(path, relabeled)
    logger.info(f"Auto-labeled {len(relabeled)} frames: {path}")
    return path
