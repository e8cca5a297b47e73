"""
Point clouds, trajectories and their file formats
"""
import logging
import os
import struct
from dataclasses import dataclass
from typing import Iterable, Tuple

import numpy as np

from config import CLOUD_MAGIC
from exceptions import ConfigurationError

logger = logging.getLogger(__name__)

CLOUD_HEADER = ['x', 'y', 'z', 'intensity']
TRAJECTORY_HEADER = ['t', 'x', 'y', 'z', 'heading']


@dataclass(frozen=True)
class LidarPoint:
    """One lidar return in the map frame; intensity in [0, 255]"""

    x: float
    y: float
    z: float
    intensity: float


@dataclass
class PointCloud:
    """Columnar point cloud: (N, 3) map-frame positions and (N,) intensities"""

    xyz: np.ndarray
    intensity: np.ndarray

    def __post_init__(self):
        self.xyz = np.asarray(self.xyz, dtype=np.float64).reshape(-1, 3)
        self.intensity = np.asarray(self.intensity, dtype=np.float64).reshape(-1)
        if len(self.xyz) != len(self.intensity):
            raise ConfigurationError("Point and intensity counts differ")
        if not np.all(np.isfinite(self.xyz)):
            raise ConfigurationError("Point cloud holds non-finite coordinates")

    @classmethod
    def from_points(cls, points: Iterable[LidarPoint]) -> 'PointCloud':
        rows = np.array([[p.x, p.y, p.z, p.intensity] for p in points], dtype=np.float64).reshape(-1, 4)
        return cls(rows[:, :3], rows[:, 3])

    @classmethod
    def concatenate(cls, clouds: Iterable['PointCloud']) -> 'PointCloud':
        clouds = list(clouds)
        if not clouds:
            return cls(np.zeros((0, 3)), np.zeros(0))
        return cls(np.concatenate([c.xyz for c in clouds]), np.concatenate([c.intensity for c in clouds]))

    def __len__(self) -> int:
        return len(self.xyz)

    def subset(self, mask: np.ndarray) -> 'PointCloud':
        return PointCloud(self.xyz[mask], self.intensity[mask])

    def points(self):
        for (x, y, z), intensity in zip(self.xyz, self.intensity):
            yield LidarPoint(float(x), float(y), float(z), float(intensity))


class Trajectory:
    """
    Ordered ego poses (t, x, y, z, heading) in the map frame

    The trajectory z is the local ground height. Lateral offsets are signed
    positive to the right of the direction of travel.
    """

    def __init__(self, poses: np.ndarray):
        poses = np.asarray(poses, dtype=np.float64)
        if poses.ndim != 2 or poses.shape[1] != 5:
            raise ConfigurationError(f"Trajectory poses must have shape (N, 5), got {poses.shape}")
        if len(poses) < 2:
            raise ConfigurationError("A trajectory needs at least 2 poses")
        steps = np.hypot(np.diff(poses[:, 1]), np.diff(poses[:, 2]))
        if np.any(steps <= 0):
            raise ConfigurationError(f"Consecutive poses coincide at index {int(np.argmin(steps))}")
        self.poses = poses
        self.arc = np.concatenate([[0.0], np.cumsum(steps)])
        self.headings = np.unwrap(poses[:, 4])
        direction = np.diff(poses[:, 1:3], axis=0) / steps[:, np.newaxis]
        self._tangents = direction

    @property
    def length(self) -> float:
        return float(self.arc[-1])

    @property
    def xy(self) -> np.ndarray:
        return self.poses[:, 1:3]

    def ground_z(self, s: np.ndarray) -> np.ndarray:
        return np.interp(s, self.arc, self.poses[:, 3])

    def heading_at(self, s: np.ndarray) -> np.ndarray:
        return np.interp(s, self.arc, self.headings)

    def point_at(self, s: np.ndarray, lateral: np.ndarray) -> np.ndarray:
        """
        Map-frame points at arc length s and signed lateral offset

        The offset follows the normal of the interpolated pose heading.
        """
        s = np.atleast_1d(np.asarray(s, dtype=np.float64))
        lateral = np.broadcast_to(np.asarray(lateral, dtype=np.float64), s.shape)
        x = np.interp(s, self.arc, self.poses[:, 1])
        y = np.interp(s, self.arc, self.poses[:, 2])
        heading = self.heading_at(s)
        # right normal of (cos h, sin h)
        return np.stack([x + lateral * np.sin(heading), y - lateral * np.cos(heading), self.ground_z(s)], axis=1)

    def pose_at(self, s: float) -> Tuple[float, float, float, float]:
        """(x, y, z, heading) at arc length s"""
        point = self.point_at(np.array([s]), np.array([0.0]))[0]
        return float(point[0]), float(point[1]), float(point[2]), float(self.heading_at(s))

    def localize(self, xy: np.ndarray, chunk: int = 4096) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        Project map points onto the trajectory polyline

        Args:
            xy: (N, 2) or (N, 3) map points (z ignored)
            chunk: Points processed per vectorized block

        Returns:
            Tuple of (arc length s, signed lateral offset d, inside mask). Points
            whose nearest polyline location is an end pose beyond the
            trajectory's extent are marked outside.
        """
        xy = np.asarray(xy, dtype=np.float64).reshape(len(xy), -1)[:, :2]
        starts = self.xy[:-1]
        tangents = self._tangents
        seg_len = np.diff(self.arc)

        s_out = np.zeros(len(xy))
        d_out = np.zeros(len(xy))
        inside = np.zeros(len(xy), dtype=bool)
        for begin in range(0, len(xy), chunk):
            block = xy[begin:begin + chunk]
            rel = block[:, np.newaxis, :] - starts[np.newaxis, :, :]
            along = np.einsum('nmk,mk->nm', rel, tangents)
            clamped = np.clip(along, 0.0, seg_len[np.newaxis, :])
            foot = starts[np.newaxis] + clamped[..., np.newaxis] * tangents[np.newaxis]
            dist = np.hypot(block[:, np.newaxis, 0] - foot[..., 0], block[:, np.newaxis, 1] - foot[..., 1])
            nearest = np.argmin(dist, axis=1)
            rows = np.arange(len(block))
            t = tangents[nearest]
            r = rel[rows, nearest]
            s_out[begin:begin + len(block)] = self.arc[nearest] + clamped[rows, nearest]
            d_out[begin:begin + len(block)] = r[:, 0] * t[:, 1] - r[:, 1] * t[:, 0]
            a = along[rows, nearest]
            beyond = ((nearest == 0) & (a < 0)) | ((nearest == len(seg_len) - 1) & (a > seg_len[-1]))
            inside[begin:begin + len(block)] = ~beyond
        return s_out, d_out, inside


def map_to_vehicle(points: np.ndarray, pose: Tuple[float, float, float, float]) -> np.ndarray:
    """Vehicle frame of a pose: x forward, y right, z up from the ground below the pose"""
    px, py, pz, heading = pose
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    dx, dy = points[:, 0] - px, points[:, 1] - py
    c, s = np.cos(heading), np.sin(heading)
    return np.stack([dx * c + dy * s, dx * s - dy * c, points[:, 2] - pz], axis=1)


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------

def _read_csv(path: str, header) -> np.ndarray:
    if not os.path.exists(path):
        raise FileNotFoundError(f"File not found: {path}")
    with open(path, 'r', encoding='utf-8') as f:
        first = f.readline().strip()
    columns = [column.strip() for column in first.split(',')]
    if columns != header:
        raise ConfigurationError(f"{path}: expected header {','.join(header)}, got {first!r}")
    try:
        data = np.loadtxt(path, delimiter=',', skiprows=1, ndmin=2, dtype=np.float64)
    except ValueError as e:
        raise ConfigurationError(f"{path}: {e}")
    if data.size == 0:
        return np.zeros((0, len(header)))
    if data.shape[1] != len(header):
        raise ConfigurationError(f"{path}: expected {len(header)} columns, got {data.shape[1]}")
    return data


def _write_csv(path: str, header, rows: np.ndarray):
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    np.savetxt(path, rows, delimiter=',', header=','.join(header), comments='', fmt='%.6f')


def read_cloud(path: str) -> PointCloud:
    """Read a CSV or HPKC binary point cloud, chosen by the file magic"""
    if not os.path.exists(path):
        raise FileNotFoundError(f"Point cloud not found: {path}")
    with open(path, 'rb') as f:
        magic = f.read(4)
    if magic == CLOUD_MAGIC:
        return read_cloud_binary(path)
    data = _read_csv(path, CLOUD_HEADER)
    return PointCloud(data[:, :3], data[:, 3])


def write_cloud_csv(path: str, cloud: PointCloud):
    _write_csv(path, CLOUD_HEADER, np.column_stack([cloud.xyz, cloud.intensity]))


def write_cloud_binary(path: str, cloud: PointCloud):
    """HPKC layout: magic, u64 count, count x f32[4] (x, y, z, intensity), little-endian"""
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    records = np.column_stack([cloud.xyz, cloud.intensity]).astype('<f4')
    with open(path, 'wb') as f:
        f.write(CLOUD_MAGIC)
        f.write(struct.pack('<Q', len(records)))
        f.write(records.tobytes())


def read_cloud_binary(path: str) -> PointCloud:
    with open(path, 'rb') as f:
        payload = f.read()
    if payload[:4] != CLOUD_MAGIC or len(payload) < 12:
        raise ConfigurationError(f"{path}: not an HPKC point cloud")
    (count,) = struct.unpack_from('<Q', payload, 4)
    if len(payload) != 12 + 16 * count:
        raise ConfigurationError(f"{path}: expected {count} records, file holds {(len(payload) - 12) / 16:g}")
    records = np.frombuffer(payload, dtype='<f4', offset=12).reshape(count, 4).astype(np.float64)
    return PointCloud(records[:, :3], records[:, 3])


def read_trajectory(path: str) -> Trajectory:
    return Trajectory(_read_csv(path, TRAJECTORY_HEADER))


def write_trajectory(path: str, trajectory: Trajectory):
    _write_csv(path, TRAJECTORY_HEADER, trajectory.poses)
