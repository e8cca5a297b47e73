"""
Training augmentation: integer translation and a fixed family of 7 perspective warps

The same transform is applied to the image (bilinear resampling, black
outside) and analytically to every label coordinate. Pixel coordinates
are continuous with pixel i covering [i, i + 1).
"""
import logging
from typing import Optional, Sequence, Tuple

import numpy as np
from PIL import Image

from detector.types import FrameLabels, GroundTruthLane, VehicleBox
from exceptions import ConfigurationError
from pipeline.run_config import AugmentConfig

logger = logging.getLogger(__name__)

MODES = ('identity', 'translation', 'perspective')
PERSPECTIVE_WARPS = 7


def homography_from_points(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """
    3x3 homography mapping 4 source points onto 4 destination points

    Raises:
        ConfigurationError: If the correspondences are degenerate
    """
    src = np.asarray(src, dtype=np.float64).reshape(4, 2)
    dst = np.asarray(dst, dtype=np.float64).reshape(4, 2)
    a = np.zeros((8, 8))
    b = np.zeros(8)
    for i, ((x, y), (u, v)) in enumerate(zip(src, dst)):
        a[2 * i] = [x, y, 1, 0, 0, 0, -u * x, -u * y]
        a[2 * i + 1] = [0, 0, 0, x, y, 1, -v * x, -v * y]
        b[2 * i], b[2 * i + 1] = u, v
    try:
        h = np.linalg.solve(a, b)
    except np.linalg.LinAlgError:
        raise ConfigurationError("Corner correspondences do not define a homography")
    return check_invertible(np.append(h, 1.0).reshape(3, 3))


def check_invertible(h: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    h = np.asarray(h, dtype=np.float64)
    if h.shape != (3, 3) or not np.all(np.isfinite(h)):
        raise ConfigurationError("Homography must be a finite 3x3 matrix")
    if abs(np.linalg.det(h)) <= tol * max(np.abs(h).max(), 1.0) ** 3:
        raise ConfigurationError("Homography is not invertible")
    return h


def perspective_homography(k: int, size: Tuple[int, int], config: AugmentConfig = AugmentConfig()) -> np.ndarray:
    """Homography of warp k: image corners moved by the configured fractions of the width"""
    if not 0 <= k < PERSPECTIVE_WARPS:
        raise ConfigurationError(f"Perspective index must be in [0, {PERSPECTIVE_WARPS}), got {k}")
    width, height = size
    corners = np.array([[0.0, 0.0], [width, 0.0], [width, height], [0.0, height]])
    moved = corners + np.asarray(config.displacements[k], dtype=np.float64) * width
    return homography_from_points(corners, moved)


def translation_homography(dx: float, dy: float) -> np.ndarray:
    return np.array([[1.0, 0.0, dx], [0.0, 1.0, dy], [0.0, 0.0, 1.0]])


def apply_homography(h: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Map (N, 2) points through h"""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    mapped = np.column_stack([points, np.ones(len(points))]) @ h.T
    return mapped[:, :2] / mapped[:, 2:3]


def warp_image(image: np.ndarray, h: np.ndarray) -> np.ndarray:
    """
    Resample an (H, W, 3) image so that output pixel p shows input pixel h^-1(p)

    Pure integer translations are copied exactly; other warps use bilinear
    sampling. Pixels mapped from outside the input are black.
    """
    h = check_invertible(h)
    height, width = image.shape[:2]
    if np.allclose(h[:2, :2], np.eye(2)) and np.allclose(h[2], [0, 0, 1]):
        dx, dy = h[0, 2], h[1, 2]
        if float(dx).is_integer() and float(dy).is_integer():
            return _shift(image, int(dx), int(dy))
    inverse = np.linalg.inv(h)
    inverse = inverse / inverse[2, 2]
    coeffs = tuple(float(c) for c in inverse.reshape(-1)[:8])
    warped = Image.fromarray(np.asarray(image, dtype=np.uint8)).transform(
        (width, height), Image.PERSPECTIVE, coeffs, Image.BILINEAR, fillcolor=(0, 0, 0)
    )
    return np.asarray(warped, dtype=np.uint8).copy()


def _shift(image: np.ndarray, dx: int, dy: int) -> np.ndarray:
    height, width = image.shape[:2]
    out = np.zeros_like(image)
    if abs(dx) >= width or abs(dy) >= height:
        return out
    src_x = slice(max(-dx, 0), width - max(dx, 0))
    src_y = slice(max(-dy, 0), height - max(dy, 0))
    dst_x = slice(max(dx, 0), width - max(-dx, 0))
    dst_y = slice(max(dy, 0), height - max(-dy, 0))
    out[dst_y, dst_x] = image[src_y, src_x]
    return out


def warp_labels(labels: FrameLabels, h: np.ndarray, size: Tuple[int, int]) -> FrameLabels:
    """
    Transform label geometry through h

    A box becomes the bounding rect of its mapped corners; lane knots are
    mapped one by one. Depths and occlusion flags are unchanged. Labels
    that end up entirely outside the image are dropped.
    """
    width, height = size
    vehicles = []
    for box in labels.vehicles:
        corners = apply_homography(h, [[box.x1, box.y1], [box.x2, box.y1], [box.x2, box.y2], [box.x1, box.y2]])
        x1, y1 = corners.min(axis=0)
        x2, y2 = corners.max(axis=0)
        if x2 <= 0 or y2 <= 0 or x1 >= width or y1 >= height:
            continue
        vehicles.append(VehicleBox(float(x1), float(y1), float(x2), float(y2), box.depth, box.score))

    lanes = []
    for lane in labels.lanes:
        points = apply_homography(h, lane.points)
        inside = (points[:, 0] >= 0) & (points[:, 0] < width) & (points[:, 1] >= 0) & (points[:, 1] < height)
        if not inside.any():
            continue
        lanes.append(GroundTruthLane(points, lane.depths.copy(), lane.occluded.copy(), lane.boundary_index))

    dropped = len(labels.vehicles) - len(vehicles) + len(labels.lanes) - len(lanes)
    if dropped:
        logger.debug(f"Augmentation moved {dropped} labels out of the image")
    return FrameLabels(vehicles=vehicles, lanes=lanes)


def augment(
    image: np.ndarray,
    labels: FrameLabels,
    mode: str,
    k: int = 0,
    seed: Optional[int] = None,
    offset: Optional[Tuple[int, int]] = None,
    config: AugmentConfig = AugmentConfig(),
) -> Tuple[np.ndarray, FrameLabels]:
    """
    Apply one augmentation to an image and its labels

    Args:
        image: (H, W, 3) uint8 image
        labels: Pixel labels of the image
        mode: 'identity', 'translation' or 'perspective'
        k: Perspective warp index in [0, 7)
        seed: Seed of the random translation when ``offset`` is not given
        offset: Explicit integer translation (dx, dy)
        config: Warp family and translation range

    Returns:
        Tuple of (augmented image, transformed labels)
    """
    if mode not in MODES:
        raise ConfigurationError(f"Unknown augmentation mode {mode!r}; expected one of {MODES}")
    height, width = image.shape[:2]
    if mode == 'identity':
        return image.copy(), labels
    if mode == 'translation':
        if offset is None:
            rng = np.random.default_rng(seed)
            limit = config.max_translation_px
            offset = tuple(int(v) for v in rng.integers(-limit, limit + 1, size=2))
        h = translation_homography(int(offset[0]), int(offset[1]))
    else:
        h = perspective_homography(k, (width, height), config)
    return warp_image(image, h), warp_labels(labels, h, (width, height))


def random_augment(
    image: np.ndarray,
    labels: FrameLabels,
    rng: np.random.Generator,
    config: AugmentConfig = AugmentConfig(),
    prob: float = 0.5,
) -> Tuple[np.ndarray, FrameLabels]:
    """With probability ``prob``, one of the translation or 7 perspective modes drawn uniformly"""
    if rng.uniform() >= prob:
        return image, labels
    choice = int(rng.integers(PERSPECTIVE_WARPS + 1))
    if choice == PERSPECTIVE_WARPS:
        return augment(image, labels, 'translation', seed=int(rng.integers(2 ** 31)), config=config)
    return augment(image, labels, 'perspective', k=choice, config=config)


def warp_family(size: Tuple[int, int], config: AugmentConfig = AugmentConfig()) -> Sequence[np.ndarray]:
    """All 7 perspective homographies for an image size"""
    return [perspective_homography(k, size, config) for k in range(PERSPECTIVE_WARPS)]
