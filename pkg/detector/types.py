"""
Detector data types and the regression encoding
"""
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from config import DEPTH_SCALE_M, REFERENCE_CONTEXT
from exceptions import ConfigurationError

# Cell classes of the shared 3-way softmax
CLASS_BACKGROUND = 0
CLASS_VEHICLE = 1
CLASS_LANE = 2
NUM_CLASSES = 3

# Output channel layout: class logits, vehicle regression, lane regression
VEHICLE_REG = 5
LANE_REG = 6
OUTPUT_CHANNELS = NUM_CLASSES + VEHICLE_REG + LANE_REG
VEHICLE_SLICE = slice(NUM_CLASSES, NUM_CLASSES + VEHICLE_REG)
LANE_SLICE = slice(NUM_CLASSES + VEHICLE_REG, OUTPUT_CHANNELS)

Rect = Tuple[float, float, float, float]


@dataclass(frozen=True)
class VehicleBox:
    """Pixel rectangle (x1 < x2, y1 < y2) with depth in meters"""

    x1: float
    y1: float
    x2: float
    y2: float
    depth: float
    score: float = 1.0

    def __post_init__(self):
        values = (self.x1, self.y1, self.x2, self.y2, self.depth, self.score)
        if not all(math.isfinite(v) for v in values):
            raise ConfigurationError(f"VehicleBox has non-finite values: {values}")
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise ConfigurationError(f"Invalid rect ({self.x1}, {self.y1}, {self.x2}, {self.y2})")
        if self.depth <= 0:
            raise ConfigurationError(f"Vehicle depth must be > 0, got {self.depth}")
        if not 0.0 <= self.score <= 1.0:
            raise ConfigurationError(f"Score must be in [0, 1], got {self.score}")

    @property
    def rect(self) -> Rect:
        return self.x1, self.y1, self.x2, self.y2

    @property
    def center(self) -> Tuple[float, float]:
        return (self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0

    def to_dict(self) -> Dict[str, float]:
        return {
            'x1': self.x1, 'y1': self.y1, 'x2': self.x2, 'y2': self.y2,
            'depth_m': self.depth, 'score': self.score,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'VehicleBox':
        return cls(
            x1=float(data['x1']), y1=float(data['y1']),
            x2=float(data['x2']), y2=float(data['y2']),
            depth=float(data['depth_m']),
            score=float(data.get('score', 1.0)),
        )


@dataclass(frozen=True)
class LaneSegmentDet:
    """Local lane boundary segment: pixel endpoints a, b and their depths"""

    xa: float
    ya: float
    xb: float
    yb: float
    depth_a: float
    depth_b: float
    score: float = 1.0

    def __post_init__(self):
        if (self.xa, self.ya) == (self.xb, self.yb):
            raise ConfigurationError(f"Lane segment endpoints coincide at ({self.xa}, {self.ya})")
        if self.depth_a <= 0 or self.depth_b <= 0:
            raise ConfigurationError(f"Lane segment depths must be > 0, got {self.depth_a}, {self.depth_b}")

    @property
    def p_a(self) -> Tuple[float, float]:
        return self.xa, self.ya

    @property
    def p_b(self) -> Tuple[float, float]:
        return self.xb, self.yb


@dataclass
class GroundTruthLane:
    """
    Lane boundary annotation in pixel space

    Attributes:
        points: (N, 2) pixel knots ordered from near to far
        depths: (N,) forward depth of each knot in meters
        occluded: (N,) flags for knots hidden behind a vehicle
        boundary_index: Signed lane multiple (-1 ego left, +1 ego right, ...)
    """

    points: np.ndarray
    depths: np.ndarray
    occluded: Optional[np.ndarray] = None
    boundary_index: int = 0

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        self.depths = np.asarray(self.depths, dtype=np.float64).reshape(-1)
        if self.occluded is None:
            self.occluded = np.zeros(len(self.points), dtype=bool)
        self.occluded = np.asarray(self.occluded, dtype=bool).reshape(-1)
        if not (len(self.points) == len(self.depths) == len(self.occluded)):
            raise ConfigurationError("Lane points, depths and occlusion flags differ in length")
        if len(self.points) < 2:
            raise ConfigurationError("A lane annotation needs at least 2 knots")
        if np.any(self.depths <= 0):
            raise ConfigurationError("Lane knot depths must be > 0")

    def segments(self) -> List[Tuple[int, np.ndarray, np.ndarray, float, float]]:
        """Consecutive knot pairs (index, p_a, p_b, depth_a, depth_b) with distinct endpoints"""
        pieces = []
        for i in range(len(self.points) - 1):
            a, b = self.points[i], self.points[i + 1]
            if np.array_equal(a, b):
                continue
            pieces.append((i, a, b, float(self.depths[i]), float(self.depths[i + 1])))
        return pieces

    def to_dict(self) -> Dict[str, Any]:
        return {
            'boundary_index': self.boundary_index,
            'knots': [[float(u), float(v), float(d)] for (u, v), d in zip(self.points, self.depths)],
            'occluded': [bool(flag) for flag in self.occluded],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'GroundTruthLane':
        knots = np.asarray(data['knots'], dtype=np.float64).reshape(-1, 3)
        return cls(
            points=knots[:, :2],
            depths=knots[:, 2],
            occluded=data.get('occluded'),
            boundary_index=int(data.get('boundary_index', 0)),
        )


@dataclass
class FrameLabels:
    """Pixel-space ground truth of one frame"""

    vehicles: List[VehicleBox] = field(default_factory=list)
    lanes: List[GroundTruthLane] = field(default_factory=list)


@dataclass
class DetectionGrid:
    """
    Decoded per-cell detector output

    Attributes:
        probs: (3, rows, cols) class probabilities
        vehicle_reg: (5, rows, cols) x1, y1, x2, y2 in pixels and depth in meters
        lane_reg: (6, rows, cols) xa, ya, xb, yb in pixels and depth_a, depth_b in meters
        valid: (rows, cols) cells inside the image
    """

    probs: np.ndarray
    vehicle_reg: np.ndarray
    lane_reg: np.ndarray
    valid: Optional[np.ndarray] = None

    def __post_init__(self):
        rows, cols = self.probs.shape[1:]
        if self.probs.shape[0] != NUM_CLASSES:
            raise ConfigurationError(f"Expected {NUM_CLASSES} class planes, got {self.probs.shape[0]}")
        if self.vehicle_reg.shape != (VEHICLE_REG, rows, cols) or self.lane_reg.shape != (LANE_REG, rows, cols):
            raise ConfigurationError("Regression planes do not match the class grid")
        if self.valid is None:
            self.valid = np.ones((rows, cols), dtype=bool)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.probs.shape[1], self.probs.shape[2]

    def classes(self) -> np.ndarray:
        """Argmax class per cell"""
        return self.probs.argmax(axis=0)


@dataclass
class GridLabel:
    """
    Rasterized training target

    Regression targets are stored decoded (pixels and meters) in the same
    layout as DetectionGrid.
    """

    cell_class: np.ndarray
    vehicle_reg: np.ndarray
    lane_reg: np.ndarray
    valid: np.ndarray
    lane_occluded: Optional[np.ndarray] = None
    dropped_boxes: int = 0

    def __post_init__(self):
        if self.lane_occluded is None:
            self.lane_occluded = np.zeros(self.cell_class.shape, dtype=bool)

    @property
    def vehicle_mask(self) -> np.ndarray:
        return self.cell_class == CLASS_VEHICLE

    @property
    def lane_mask(self) -> np.ndarray:
        return self.cell_class == CLASS_LANE

    @property
    def reg_mask(self) -> np.ndarray:
        return self.cell_class != CLASS_BACKGROUND


@dataclass(frozen=True)
class RegressionCodec:
    """
    Cell-relative regression encoding

    Pixel coordinates are stored as offsets from the cell center divided by
    the context size; depths are divided by ``depth_scale``.
    """

    context: float = float(REFERENCE_CONTEXT)
    depth_scale: float = DEPTH_SCALE_M

    def __post_init__(self):
        if self.context <= 0 or self.depth_scale <= 0:
            raise ConfigurationError("Codec context and depth scale must be > 0")

    def _offsets(self, cx: np.ndarray, cy: np.ndarray, points: int) -> np.ndarray:
        return np.stack([cx, cy] * points)

    def channel_scales(self, depths: int) -> np.ndarray:
        """d(decoded)/d(encoded) per channel: 4 coordinates then ``depths`` depths, shaped (C, 1, 1)"""
        return np.array([self.context] * 4 + [self.depth_scale] * depths, dtype=np.float64)[:, np.newaxis, np.newaxis]

    def encode_vehicle(self, reg: np.ndarray, cx: np.ndarray, cy: np.ndarray) -> np.ndarray:
        out = np.empty(reg.shape, dtype=np.float64)
        out[:4] = (reg[:4] - self._offsets(cx, cy, 2)) / self.context
        out[4] = reg[4] / self.depth_scale
        return out

    def decode_vehicle(self, enc: np.ndarray, cx: np.ndarray, cy: np.ndarray) -> np.ndarray:
        out = np.empty(enc.shape, dtype=np.float64)
        out[:4] = enc[:4] * self.context + self._offsets(cx, cy, 2)
        out[4] = enc[4] * self.depth_scale
        return out

    def encode_lane(self, reg: np.ndarray, cx: np.ndarray, cy: np.ndarray) -> np.ndarray:
        out = np.empty(reg.shape, dtype=np.float64)
        out[:4] = (reg[:4] - self._offsets(cx, cy, 2)) / self.context
        out[4:6] = reg[4:6] / self.depth_scale
        return out

    def decode_lane(self, enc: np.ndarray, cx: np.ndarray, cy: np.ndarray) -> np.ndarray:
        out = np.empty(enc.shape, dtype=np.float64)
        out[:4] = enc[:4] * self.context + self._offsets(cx, cy, 2)
        out[4:6] = enc[4:6] * self.depth_scale
        return out
