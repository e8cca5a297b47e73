"""
Synthetic highway scenes: point-cloud map, trajectory, rendered frames and exact labels
"""
import logging
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Tuple

import numpy as np
from PIL import Image, ImageDraw
from scipy.spatial import ConvexHull
from tqdm import tqdm

from autolabel.boundaries import BoundaryPolyline
from autolabel.pointcloud import PointCloud, Trajectory, map_to_vehicle
from autolabel.projection import Cuboid, project_labels
from detector.types import FrameLabels
from exceptions import ConfigurationError
from postprocess.camera import CameraModel, project

logger = logging.getLogger(__name__)

SKY = (135, 170, 210)
GRASS = (70, 110, 60)
ASPHALT = (90, 90, 95)
PAINT = (235, 235, 225)
VEHICLE_COLORS = ((200, 40, 40), (40, 70, 190), (220, 200, 60), (30, 30, 30), (230, 230, 235))


@dataclass(frozen=True)
class SceneConfig:
    """Parameters of one synthetic highway scene"""

    length_m: float = 220.0
    pose_spacing_m: float = 1.0
    curvature: float = 0.0
    speed_mps: float = 25.0
    lane_width_m: float = 3.6
    n_left: int = 1
    n_right: int = 1
    paint_spacing_m: float = 0.1
    paint_noise_m: float = 0.02
    paint_width_m: float = 0.15
    asphalt_points: int = 4000
    clutter_points: int = 200
    vehicles: int = 6
    vehicle_length_m: float = 4.5
    vehicle_width_m: float = 1.8
    vehicle_height_m: float = 1.5
    frames: int = 4
    first_frame_m: float = 10.0
    frame_spacing_m: float = 25.0
    image_width: int = 640
    image_height: int = 480
    segment_px: float = 8.0
    radar_detect_prob: float = 0.9
    radar_noise_px: float = 2.0

    def __post_init__(self):
        if self.length_m <= 0 or self.pose_spacing_m <= 0 or self.lane_width_m <= 0:
            raise ConfigurationError("Scene length, pose spacing and lane width must be > 0")
        if self.n_left < 0 or self.n_right < 0 or self.frames < 0 or self.vehicles < 0:
            raise ConfigurationError("Scene counts must be >= 0")
        if abs(self.curvature) * self.length_m > np.pi:
            raise ConfigurationError("Scene curvature turns the road by more than 180 degrees")
        last_frame = self.first_frame_m + max(self.frames - 1, 0) * self.frame_spacing_m
        if last_frame >= self.length_m:
            raise ConfigurationError("Frames extend beyond the end of the road")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True)
class RadarReturn:
    """Radar hit of a vehicle, placed in the image (u, v) with a range in meters"""

    u: float
    v: float
    depth: float


@dataclass
class SynthFrame:
    frame_id: str
    s: float
    pose: Tuple[float, float, float, float]
    image: np.ndarray
    labels: FrameLabels
    lanes3d: Dict[int, np.ndarray]
    radar: List[RadarReturn] = field(default_factory=list)


@dataclass
class SynthScene:
    """Everything one seed produces, with the generator's exact truth"""

    config: SceneConfig
    trajectory: Trajectory
    cloud: PointCloud
    boundaries: List[BoundaryPolyline]
    vehicles: List[Cuboid]
    frames: List[SynthFrame]
    camera: CameraModel

    def truth_lateral(self, boundary_id: int) -> float:
        return boundary_offset(boundary_id, self.config.lane_width_m)


def boundary_offset(boundary_id: int, lane_width: float) -> float:
    """Lateral offset of a boundary from the ego lane center; -1/+1 are the ego boundaries"""
    if boundary_id == 0:
        raise ConfigurationError("Boundary ids are non-zero")
    sign = 1.0 if boundary_id > 0 else -1.0
    return sign * (lane_width / 2.0 + (abs(boundary_id) - 1) * lane_width)


def road_point(s: np.ndarray, lateral: np.ndarray, curvature: float) -> np.ndarray:
    """Exact map point at arc length s and lateral offset (positive right) on a constant-curvature road"""
    s = np.asarray(s, dtype=np.float64)
    lateral = np.broadcast_to(np.asarray(lateral, dtype=np.float64), s.shape)
    heading = curvature * s
    if curvature == 0.0:
        cx, cy = s, np.zeros_like(s)
    else:
        cx, cy = np.sin(heading) / curvature, (1.0 - np.cos(heading)) / curvature
    return np.stack([cx + lateral * np.sin(heading), cy - lateral * np.cos(heading), np.zeros_like(s)], axis=-1)


def make_trajectory(config: SceneConfig) -> Trajectory:
    s = np.arange(0.0, config.length_m + 1e-9, config.pose_spacing_m)
    xyz = road_point(s, 0.0, config.curvature)
    poses = np.column_stack([s / config.speed_mps, xyz, config.curvature * s])
    return Trajectory(poses)


def truth_boundaries(config: SceneConfig, step: float = 1.0) -> List[BoundaryPolyline]:
    """Generator truth for every boundary, leftmost first"""
    s = np.arange(0.0, config.length_m + 1e-9, step)
    ids = list(range(-(config.n_left + 1), 0)) + list(range(1, config.n_right + 2))
    boundaries = []
    for boundary_id in ids:
        lateral = np.full_like(s, boundary_offset(boundary_id, config.lane_width_m))
        boundaries.append(BoundaryPolyline(
            side='left' if boundary_id < 0 else 'right',
            offset_index=boundary_id,
            points=road_point(s, lateral, config.curvature),
            s=s.copy(),
            lateral=lateral,
        ))
    return boundaries


def _make_cloud(config: SceneConfig, boundaries: List[BoundaryPolyline], rng: np.random.Generator) -> PointCloud:
    clouds = []
    s_paint = np.arange(0.0, config.length_m, config.paint_spacing_m)
    for boundary in boundaries:
        lateral = boundary.lateral[0] + rng.normal(0.0, config.paint_noise_m, size=s_paint.shape)
        xyz = road_point(s_paint, lateral, config.curvature)
        xyz[:, 2] = rng.normal(0.0, 0.01, size=s_paint.shape)
        clouds.append(PointCloud(xyz, rng.uniform(180.0, 255.0, size=s_paint.shape)))

    half_road = (max(config.n_left, config.n_right) + 1.5) * config.lane_width_m
    s_asphalt = rng.uniform(0.0, config.length_m, size=config.asphalt_points)
    lat_asphalt = rng.uniform(-half_road, half_road, size=config.asphalt_points)
    xyz = road_point(s_asphalt, lat_asphalt, config.curvature)
    xyz[:, 2] = rng.normal(0.0, 0.01, size=config.asphalt_points)
    clouds.append(PointCloud(xyz, rng.uniform(5.0, 80.0, size=config.asphalt_points)))

    # bright returns above the road: signs and gantries
    s_clutter = rng.uniform(0.0, config.length_m, size=config.clutter_points)
    lat_clutter = rng.choice([-1.0, 1.0], size=config.clutter_points) * rng.uniform(1.5, 2.1, size=config.clutter_points)
    xyz = road_point(s_clutter, lat_clutter, config.curvature)
    xyz[:, 2] = rng.uniform(1.2, 5.0, size=config.clutter_points)
    clouds.append(PointCloud(xyz, rng.uniform(150.0, 255.0, size=config.clutter_points)))
    return PointCloud.concatenate(clouds)


def _make_vehicles(config: SceneConfig, rng: np.random.Generator) -> List[Cuboid]:
    lanes = list(range(-config.n_left, config.n_right + 1))
    start = config.first_frame_m + 12.0
    stop = config.length_m - config.vehicle_length_m - 1.0
    if config.vehicles == 0 or stop <= start:
        return []
    taken: Dict[int, List[float]] = {lane: [] for lane in lanes}
    cuboids = []
    attempts = 0
    while len(cuboids) < config.vehicles and attempts < 100 * config.vehicles:
        attempts += 1
        lane = int(rng.choice(lanes))
        s_rear = float(rng.uniform(start, stop))
        if any(abs(s_rear - other) < config.vehicle_length_m + 6.0 for other in taken[lane]):
            continue
        taken[lane].append(s_rear)
        center = lane * config.lane_width_m
        half = config.vehicle_width_m / 2.0
        corners = []
        for s in (s_rear, s_rear + config.vehicle_length_m):
            for lateral, z in ((center - half, 0.0), (center + half, 0.0),
                               (center + half, config.vehicle_height_m), (center - half, config.vehicle_height_m)):
                point = road_point(np.array([s]), np.array([lateral]), config.curvature)[0]
                point[2] = z
                corners.append(point)
        color = VEHICLE_COLORS[int(rng.integers(len(VEHICLE_COLORS)))]
        cuboids.append(Cuboid(corners=np.array(corners), color=color))
    return cuboids


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

def _polygon(draw: ImageDraw.ImageDraw, points_vehicle: np.ndarray, cam: CameraModel, fill):
    uv, visible = project(points_vehicle, cam)
    if not visible.all():
        return
    draw.polygon([(float(u), float(v)) for u, v in uv], fill=fill)


def _strip(draw, left: np.ndarray, right: np.ndarray, cam: CameraModel, fill):
    """Fill the band between two vehicle-frame polylines sampled at the same stations"""
    for i in range(len(left) - 1):
        quad = np.array([left[i], left[i + 1], right[i + 1], right[i]])
        _polygon(draw, quad, cam, fill)


def render_frame(
    config: SceneConfig,
    pose: Tuple[float, float, float, float],
    s_ego: float,
    vehicles: List[Cuboid],
    cam: CameraModel,
    draw_range_m: float = 150.0,
) -> np.ndarray:
    """
    Flat-shaded camera image of the scene from one pose

    Returns:
        (H, W, 3) uint8 array
    """
    width, height = config.image_width, config.image_height
    image = Image.new('RGB', (width, height), GRASS)
    draw = ImageDraw.Draw(image)
    horizon = cam.cy - cam.focal * np.tan(cam.pitch)
    draw.rectangle([0, 0, width, max(horizon, 0.0)], fill=SKY)

    s = np.arange(s_ego + 1.0, min(s_ego + draw_range_m, config.length_m), 1.0)
    if len(s) >= 2:
        edge = (max(config.n_left, config.n_right) + 1.5) * config.lane_width_m
        road_left = map_to_vehicle(road_point(s, -edge, config.curvature), pose)
        road_right = map_to_vehicle(road_point(s, edge, config.curvature), pose)
        _strip(draw, road_left, road_right, cam, ASPHALT)
        for boundary_id in list(range(-(config.n_left + 1), 0)) + list(range(1, config.n_right + 2)):
            center = boundary_offset(boundary_id, config.lane_width_m)
            half = config.paint_width_m / 2.0
            paint_left = map_to_vehicle(road_point(s, center - half, config.curvature), pose)
            paint_right = map_to_vehicle(road_point(s, center + half, config.curvature), pose)
            _strip(draw, paint_left, paint_right, cam, PAINT)

    # far to near
    placed = []
    for cuboid in vehicles:
        corners = map_to_vehicle(cuboid.corners, pose)
        if np.any(corners[:, 0] < 1.0):
            continue
        placed.append((float(corners[:, 0].min()), corners, cuboid.color))
    for _, corners, color in sorted(placed, key=lambda item: -item[0]):
        uv, _ = project(corners, cam)
        hull = ConvexHull(uv)
        shade = tuple(int(c * 0.7) for c in color)
        draw.polygon([(float(u), float(v)) for u, v in uv[hull.vertices]], fill=shade)
        draw.polygon([(float(u), float(v)) for u, v in uv[:4]], fill=color)

    return np.asarray(image, dtype=np.uint8).copy()


def _radar_returns(labels: FrameLabels, config: SceneConfig, rng: np.random.Generator) -> List[RadarReturn]:
    returns = []
    for box in labels.vehicles:
        if rng.uniform() >= config.radar_detect_prob:
            continue
        cx, cy = box.center
        returns.append(RadarReturn(
            u=float(cx + rng.normal(0.0, config.radar_noise_px)),
            v=float(cy + rng.normal(0.0, config.radar_noise_px)),
            depth=float(box.depth + rng.normal(0.0, 0.5)),
        ))
    return returns


def synth_scene(config: SceneConfig, cam: CameraModel, seed: int = 0, show_progress: bool = False) -> SynthScene:
    """
    Generate a deterministic synthetic highway scene

    The ego vehicle drives the center of the ego lane of a constant-curvature
    road. The point cloud holds lane paint (bright, on the ground), asphalt
    (dark) and bright clutter above the ground. Frames are rendered with
    ``cam`` and labelled by projecting the generator's exact geometry.

    Args:
        config: Scene parameters
        cam: Camera model of the rendered frames
        seed: Seed of every random draw
        show_progress: Show a progress bar over frames

    Returns:
        SynthScene
    """
    rng = np.random.default_rng(seed)
    trajectory = make_trajectory(config)
    boundaries = truth_boundaries(config)
    cloud = _make_cloud(config, boundaries, rng)
    vehicles = _make_vehicles(config, rng)
    image_size = (config.image_width, config.image_height)

    frames = []
    stations = [config.first_frame_m + i * config.frame_spacing_m for i in range(config.frames)]
    for index, s_ego in enumerate(tqdm(stations, desc="Rendering frames", disable=not show_progress)):
        pose = trajectory.pose_at(s_ego)
        image = render_frame(config, pose, s_ego, vehicles, cam)
        labels, lanes3d = project_labels(
            boundaries, vehicles, pose, cam, image_size, segment_px=config.segment_px
        )
        frames.append(SynthFrame(
            frame_id=f"{seed:04d}_{index:04d}",
            s=s_ego,
            pose=pose,
            image=image,
            labels=labels,
            lanes3d=lanes3d,
            radar=_radar_returns(labels, config, rng),
        ))
    logger.info(
        f"Scene seed {seed}: {len(cloud)} points, {len(vehicles)} vehicles, {len(frames)} frames"
    )
    return SynthScene(
        config=config,
        trajectory=trajectory,
        cloud=cloud,
        boundaries=boundaries,
        vehicles=vehicles,
        frames=frames,
        camera=cam,
    )


