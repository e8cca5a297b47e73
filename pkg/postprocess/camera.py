"""
Pinhole camera with pitch, forward projection and inverse perspective mapping

Vehicle frame: x forward, y right, z up, origin on the ground below the
camera. Depth is the forward distance x.
"""
import math
from dataclasses import asdict, dataclass
from typing import Any, Dict, Tuple

import numpy as np

from exceptions import ConfigurationError, DomainError


@dataclass(frozen=True)
class CameraModel:
    """
    Attributes:
        focal: Focal length in pixels
        cx, cy: Principal point in pixels
        height: Camera height above ground in meters
        pitch: Downward tilt in radians
    """

    focal: float = 500.0
    cx: float = 320.0
    cy: float = 240.0
    height: float = 1.5
    pitch: float = 0.0

    def __post_init__(self):
        if self.focal <= 0:
            raise ConfigurationError(f"Camera focal length must be > 0, got {self.focal}")
        if self.height <= 0:
            raise ConfigurationError(f"Camera height must be > 0, got {self.height}")

    def scaled(self, factor: float) -> 'CameraModel':
        """Same camera for an image resized by ``factor``"""
        return CameraModel(
            focal=self.focal * factor, cx=self.cx * factor, cy=self.cy * factor,
            height=self.height, pitch=self.pitch,
        )

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'CameraModel':
        unknown = set(data) - {'focal', 'cx', 'cy', 'height', 'pitch'}
        if unknown:
            raise ConfigurationError(f"Unknown camera keys: {sorted(unknown)}")
        return cls(**{key: float(value) for key, value in data.items()})

    def _axes(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        s, c = math.sin(self.pitch), math.cos(self.pitch)
        right = np.array([0.0, 1.0, 0.0])
        down = np.array([-s, 0.0, -c])
        forward = np.array([c, 0.0, -s])
        return right, down, forward

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        """Vehicle-frame points (N, 3) to camera coordinates (right, down, optical)"""
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        rel = points - np.array([0.0, 0.0, self.height])
        right, down, forward = self._axes()
        return np.stack([rel @ right, rel @ down, rel @ forward], axis=1)


def project(points: np.ndarray, cam: CameraModel) -> Tuple[np.ndarray, np.ndarray]:
    """
    Project vehicle-frame points to pixels

    Args:
        points: (N, 3) points in meters
        cam: Camera model

    Returns:
        Tuple of ((N, 2) pixel coordinates, (N,) mask of points in front of the camera).
        Pixels of points behind the camera are NaN.
    """
    cam_points = cam.to_camera(points)
    z = cam_points[:, 2]
    visible = z > 1e-9
    uv = np.full((len(cam_points), 2), np.nan)
    uv[visible, 0] = cam.cx + cam.focal * cam_points[visible, 0] / z[visible]
    uv[visible, 1] = cam.cy + cam.focal * cam_points[visible, 1] / z[visible]
    return uv, visible


def ipm_points(pixels: np.ndarray, depths: np.ndarray, cam: CameraModel) -> np.ndarray:
    """Vectorized ipm_to_3d over (N, 2) pixels and (N,) forward depths"""
    pixels = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    depths = np.asarray(depths, dtype=np.float64).reshape(-1)
    if len(pixels) != len(depths):
        raise ConfigurationError("Pixel and depth counts differ")
    if np.any(depths <= 0):
        raise DomainError("IPM depth must be > 0")
    a = (pixels[:, 0] - cam.cx) / cam.focal
    b = (pixels[:, 1] - cam.cy) / cam.focal
    right, down, forward = cam._axes()
    rays = a[:, np.newaxis] * right + b[:, np.newaxis] * down + forward
    if np.any(rays[:, 0] <= 1e-12):
        raise DomainError("Pixel ray has no positive forward component")
    scale = depths / rays[:, 0]
    return np.array([0.0, 0.0, cam.height]) + scale[:, np.newaxis] * rays


def ipm_to_3d(pixel: Tuple[float, float], depth_m: float, cam: CameraModel) -> Tuple[float, float, float]:
    """
    Place a pixel in the vehicle frame at a given forward depth

    Args:
        pixel: (u, v) image coordinates
        depth_m: Forward distance x in meters (> 0)
        cam: Camera model

    Returns:
        (x, y, z) in meters

    Raises:
        DomainError: If depth <= 0 or the pixel ray never moves forward
    """
    x, y, z = ipm_points(np.array([pixel]), np.array([depth_m]), cam)[0]
    return float(x), float(y), float(z)
