"""
Overlays for inspecting labels, detections and lane evaluation
"""
import logging
import os
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from PIL import Image, ImageDraw
from tqdm import tqdm

from detector.labels import rasterize_labels
from detector.types import FrameLabels, VehicleBox
from evaluation.lanes import match_lane_points
from geometry.cells import GridGeometry
from pipeline.dataset import FrameRecord, read_image, resize_frame
from pipeline.infer import lane_polyline
from pipeline.run_config import RunConfig

logger = logging.getLogger(__name__)

NEAR_M = 10.0
FAR_M = 80.0
VEHICLE_CELL = (40, 220, 90, 90)
LANE_CELL = (250, 210, 40, 60)
BOX_COLOR = (40, 220, 90)
OUTCOME_COLORS = {'tp': (40, 90, 240), 'fp': (230, 40, 40), 'fn': (240, 220, 40)}
LANE_PALETTE = (
    (230, 25, 75), (60, 180, 75), (255, 225, 25), (0, 130, 200), (245, 130, 48),
    (145, 30, 180), (70, 240, 240), (240, 50, 230), (210, 245, 60), (250, 190, 212),
)


def depth_color(depth: float, near: float = NEAR_M, far: float = FAR_M) -> Tuple[int, int, int]:
    """Red at ``near`` fading to blue at ``far``"""
    t = float(np.clip((depth - near) / (far - near), 0.0, 1.0))
    return int(round(255 * (1.0 - t))), 0, int(round(255 * t))


def _rgba(image: np.ndarray) -> Image.Image:
    return Image.fromarray(np.asarray(image, dtype=np.uint8), mode='RGB').convert('RGBA')


def _to_array(image: Image.Image) -> np.ndarray:
    return np.asarray(image.convert('RGB'), dtype=np.uint8).copy()


def render_labels(
    image: np.ndarray,
    labels: FrameLabels,
    geometry: GridGeometry,
    shrink: float = 0.75,
    lane_half_width: float = 2.0,
) -> np.ndarray:
    """
    Draw the rasterized training target of a frame

    Active vehicle cells are tinted green and lane cells yellow. The lane
    regression segment of every lane cell is drawn colored by depth from
    red (near) to blue (far). Occluded lane knots are drawn as hollow
    circles, vehicle boxes as outlines.

    Args:
        image: (H, W, 3) uint8 image at the geometry's input size
        labels: Labels in the same pixel frame
        geometry: Cell grid of the network input
        shrink: Box shrink factor used for the vehicle cells
        lane_half_width: Lane strip half width in pixels

    Returns:
        (H, W, 3) uint8 overlay
    """
    target = rasterize_labels(labels.vehicles, labels.lanes, geometry, shrink, lane_half_width)
    base = _rgba(image)
    tiles = Image.new('RGBA', base.size, (0, 0, 0, 0))
    draw = ImageDraw.Draw(tiles)
    size = geometry.cell_size
    for mask, fill in ((target.vehicle_mask, VEHICLE_CELL), (target.lane_mask, LANE_CELL)):
        for row, col in zip(*np.nonzero(mask)):
            draw.rectangle([col * size, row * size, (col + 1) * size - 1, (row + 1) * size - 1], fill=fill)
    out = Image.alpha_composite(base, tiles)
    draw = ImageDraw.Draw(out)

    segments = {tuple(target.lane_reg[:, row, col]) for row, col in zip(*np.nonzero(target.lane_mask))}
    for xa, ya, xb, yb, depth_a, depth_b in sorted(segments):
        draw.line([(xa, ya), (xb, yb)], fill=depth_color((depth_a + depth_b) / 2.0), width=1)
    for lane in labels.lanes:
        for (u, v), hidden in zip(lane.points, lane.occluded):
            if hidden:
                draw.ellipse([u - 2, v - 2, u + 2, v + 2], outline=(255, 255, 255))
    for box in labels.vehicles:
        draw.rectangle(list(box.rect), outline=BOX_COLOR)
    return _to_array(out)


def render_detections(
    image: np.ndarray,
    vehicles: Sequence[VehicleBox],
    lanes: Sequence[Sequence[Sequence[float]]],
) -> np.ndarray:
    """
    Draw merged boxes with depth captions and lane clusters in distinct colors

    Args:
        image: (H, W, 3) uint8 source frame
        vehicles: Merged boxes in source pixels
        lanes: Knots [u, v, depth_m] of every lane, near to far

    Returns:
        (H, W, 3) uint8 overlay
    """
    out = _rgba(image)
    draw = ImageDraw.Draw(out)
    for box in vehicles:
        draw.rectangle(list(box.rect), outline=BOX_COLOR, width=2)
        draw.text((box.x1 + 2, max(box.y1 - 11, 0)), f"{box.depth:.1f}m", fill=BOX_COLOR)
    for i, knots in enumerate(lanes):
        color = LANE_PALETTE[i % len(LANE_PALETTE)]
        points = [(float(u), float(v)) for u, v, _ in knots]
        if len(points) >= 2:
            draw.line(points, fill=color, width=2)
        for u, v in points:
            draw.ellipse([u - 2, v - 2, u + 2, v + 2], fill=color)
    return _to_array(out)


def render_lane_eval_topview(
    pred_lanes: Sequence[np.ndarray],
    gt_boundaries: Mapping[int, np.ndarray],
    tol_m: float = 0.5,
    size: Tuple[int, int] = (320, 640),
    lateral_range_m: float = 12.0,
    forward_range_m: float = 85.0,
) -> np.ndarray:
    """
    Bird's-eye view of the lane evaluation of one frame

    Ground truth boundaries are gray, predictions white. Every counted
    event is a dot at its evaluation distance: true positives blue, false
    positives red, false negatives yellow.

    Args:
        pred_lanes: Predicted (K, 3) vehicle-frame polylines
        gt_boundaries: Ground truth (K, 3) polylines by boundary id
        tol_m: Lateral tolerance
        size: (width, height) in pixels
        lateral_range_m: Half width of the view in meters
        forward_range_m: Depth of the view in meters

    Returns:
        (H, W, 3) uint8 image, ego vehicle at the bottom center
    """
    width, height = size
    image = Image.new('RGB', size, (20, 20, 20))
    draw = ImageDraw.Draw(image)

    def to_px(x: float, y: float) -> Tuple[float, float]:
        return width / 2.0 + y / lateral_range_m * (width / 2.0), height - x / forward_range_m * height

    for x in range(0, int(forward_range_m) + 1, 10):
        draw.line([to_px(x, -lateral_range_m), to_px(x, lateral_range_m)], fill=(50, 50, 50))
    for lines, color in ((gt_boundaries.values(), (130, 130, 130)), (pred_lanes, (235, 235, 235))):
        for line in lines:
            line = np.asarray(line, dtype=np.float64).reshape(-1, 3)
            if len(line) >= 2:
                draw.line([to_px(x, y) for x, y, _ in line], fill=color, width=1)

    outcomes = match_lane_points(pred_lanes, gt_boundaries, tol_m)
    for outcome in outcomes:
        u, v = to_px(outcome.distance, outcome.lateral)
        draw.ellipse([u - 3, v - 3, u + 3, v + 3], fill=OUTCOME_COLORS[outcome.kind])
    return np.asarray(image, dtype=np.uint8).copy()


def _save(path: str, image: np.ndarray):
    Image.fromarray(image, mode='RGB').save(path, format='PNG')


def run_render(
    config: RunConfig,
    records: Sequence[FrameRecord],
    out_dir: str,
    detections: Optional[Sequence[Mapping[str, Any]]] = None,
    show_progress: bool = True,
) -> List[str]:
    """
    Write label, detection and lane top-view overlays of every frame as PNG

    Detection and top-view images are written only for frames present in
    ``detections``.

    Returns:
        Paths written
    """
    os.makedirs(out_dir, exist_ok=True)
    geometry = GridGeometry.from_layers(config.architecture, config.image_size, config.cell_size)
    by_frame: Dict[str, Mapping[str, Any]] = {d['frame_id']: d for d in (detections or [])}
    written = []
    for record in tqdm(records, desc="Rendering", disable=not show_progress):
        source = read_image(record.image)
        image, labels = resize_frame(source, record.labels, config.image_size)
        path = os.path.join(out_dir, f"{record.frame_id}_labels.png")
        _save(path, render_labels(image, labels, geometry, config.train.shrink, config.train.lane_half_width_px))
        written.append(path)

        detection = by_frame.get(record.frame_id)
        if detection is None:
            continue
        vehicles = [VehicleBox.from_dict(box) for box in detection['vehicles']]
        knots = [lane['knots'] for lane in detection['lanes']]
        path = os.path.join(out_dir, f"{record.frame_id}_detections.png")
        _save(path, render_detections(source, vehicles, knots))
        written.append(path)

        cam = config.camera(record.camera_id)
        path = os.path.join(out_dir, f"{record.frame_id}_lanes_top.png")
        _save(path, render_lane_eval_topview(
            [lane_polyline(k, cam) for k in knots], record.lanes3d, config.thresholds.lane_tol_m,
        ))
        written.append(path)
    logger.info(f"Rendered {len(written)} images to {out_dir}")
    return written
