"""
Run configuration: one JSON file parsed into frozen, validated dataclasses
"""
import dataclasses
import json
import os
from dataclasses import dataclass, field
from typing import Any, Dict, Mapping, Optional, Tuple

from autolabel.synth import SceneConfig
from config import (
    CELL_SIZE,
    DEPTH_BIN_M,
    GROUND_TOL_M,
    HPK_WORKERS,
    IMAGE_HEIGHT,
    IMAGE_WIDTH,
    INTENSITY_MIN,
    IOU_MIN,
    KNOT_SPACING_M,
    LANE_TOL_M,
    LATERAL_MAX_M,
    LATERAL_MIN_M,
)
from exceptions import ConfigurationError
from nn.layers import LayerSpec
from nn.optim import LearningRateSchedule, MomentumSchedule
from postprocess.camera import CameraModel
from postprocess.merge import MergeParams

DEFAULT_CAMERA_ID = 'front'

# Corner displacements as fractions of the image width, corners ordered
# top-left, top-right, bottom-right, bottom-left, each (dx, dy).
DEFAULT_DISPLACEMENTS = (
    ((0.025, 0.0), (-0.025, 0.0), (0.0, 0.0), (0.0, 0.0)),
    ((0.05, 0.0), (-0.05, 0.0), (0.0, 0.0), (0.0, 0.0)),
    ((0.075, 0.0), (-0.075, 0.0), (0.0, 0.0), (0.0, 0.0)),
    ((-0.025, 0.0), (0.025, 0.0), (0.0, 0.0), (0.0, 0.0)),
    ((-0.05, 0.0), (0.05, 0.0), (0.0, 0.0), (0.0, 0.0)),
    ((-0.075, 0.0), (0.075, 0.0), (0.0, 0.0), (0.0, 0.0)),
    ((0.05, 0.025), (-0.025, 0.05), (0.025, -0.025), (-0.05, -0.025)),
)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    lr_decay_factor: float = 0.5
    lr_decay_every: int = 5
    momentum_schedule: str = 'increasing'
    momentum: float = 0.9
    momentum_max: float = 0.95
    momentum_period: int = 250
    batch_size: int = 4
    epochs: int = 10
    class_weights: Tuple[float, ...] = (1.0, 1.0, 1.0)
    reg_weight: float = 1.0
    regression: str = 'l1'
    shrink: float = 0.75
    lane_half_width_px: float = 2.0
    augment: bool = True
    augment_prob: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigurationError("train.batch_size must be >= 1 and train.epochs >= 0")
        if len(self.class_weights) != 3 or any(w < 0 for w in self.class_weights):
            raise ConfigurationError("train.class_weights must be 3 non-negative numbers")
        if self.regression not in ('l1', 'l2'):
            raise ConfigurationError(f"train.regression must be 'l1' or 'l2', got {self.regression!r}")
        if self.reg_weight < 0:
            raise ConfigurationError("train.reg_weight must be >= 0")
        if not 0.0 <= self.augment_prob <= 1.0:
            raise ConfigurationError("train.augment_prob must be in [0, 1]")
        # constructing the schedules validates their ranges
        self.lr_schedule()
        self.momentum_at(0)

    def lr_schedule(self) -> LearningRateSchedule:
        return LearningRateSchedule(self.learning_rate, self.lr_decay_factor, self.lr_decay_every)

    def momentum_at(self, step: int) -> float:
        return MomentumSchedule(
            self.momentum_schedule, self.momentum, self.momentum_max, self.momentum_period
        ).momentum_at(step)


@dataclass(frozen=True)
class ThresholdConfig:
    activation: float = 0.5
    merge_eps: float = 0.2
    merge_min_group: int = 2
    dbscan_eps_m: float = 2.0
    dbscan_min_pts: int = 3
    longitudinal_scale: float = 1.0
    collapse_px: float = 2.0
    iou_min: float = IOU_MIN
    lane_tol_m: float = LANE_TOL_M
    depth_bin_m: float = DEPTH_BIN_M

    def __post_init__(self):
        if not 0.0 <= self.activation < 1.0:
            raise ConfigurationError("thresholds.activation must be in [0, 1)")
        if self.dbscan_eps_m <= 0 or self.dbscan_min_pts < 1 or self.longitudinal_scale <= 0:
            raise ConfigurationError("thresholds.dbscan_* and longitudinal_scale must be positive")
        if not 0.0 < self.iou_min <= 1.0 or self.lane_tol_m <= 0 or self.depth_bin_m <= 0:
            raise ConfigurationError("thresholds.iou_min, lane_tol_m and depth_bin_m out of range")
        self.merge_params()

    def merge_params(self) -> MergeParams:
        return MergeParams(eps=self.merge_eps, min_group=self.merge_min_group)


@dataclass(frozen=True)
class AugmentConfig:
    displacements: Tuple[Tuple[Tuple[float, float], ...], ...] = DEFAULT_DISPLACEMENTS
    max_translation_px: int = 8

    def __post_init__(self):
        if len(self.displacements) != 7:
            raise ConfigurationError(f"augment.displacements must hold 7 warps, got {len(self.displacements)}")
        for k, corners in enumerate(self.displacements):
            if len(corners) != 4 or any(len(corner) != 2 for corner in corners):
                raise ConfigurationError(f"augment.displacements[{k}] must be 4 (dx, dy) pairs")
        if self.max_translation_px < 0:
            raise ConfigurationError("augment.max_translation_px must be >= 0")


@dataclass(frozen=True)
class AutolabelConfig:
    intensity_min: float = INTENSITY_MIN
    ground_tol_m: float = GROUND_TOL_M
    lateral_min_m: float = LATERAL_MIN_M
    lateral_max_m: float = LATERAL_MAX_M
    knot_spacing_m: float = KNOT_SPACING_M
    n_left: int = 1
    n_right: int = 1

    def __post_init__(self):
        if not 0 <= self.lateral_min_m < self.lateral_max_m:
            raise ConfigurationError("autolabel.lateral_min_m must be in [0, lateral_max_m)")
        if self.knot_spacing_m <= 0 or self.ground_tol_m < 0:
            raise ConfigurationError("autolabel.knot_spacing_m must be > 0 and ground_tol_m >= 0")
        if self.n_left < 0 or self.n_right < 0:
            raise ConfigurationError("autolabel.n_left and n_right must be >= 0")


@dataclass(frozen=True)
class RunConfig:
    """
    Everything one run of the pipeline needs

    Attributes:
        name: Run name, used in report metadata
        image_width, image_height: Network input size; frames are resized to it
        cell_size: Mask cell side in pixels
        architecture: Layer sequence ending in a softmax-grid layer
        train: Optimizer, loss and label settings
        thresholds: Post-processing and evaluation thresholds
        augment: Perspective warps and translation range
        autolabel: Point filter and boundary fitting settings
        cameras: Camera models of the source frames by camera id
        synth: Synthetic scene parameters
        scenes: Number of synthetic scenes (seeds seed .. seed + scenes - 1)
        seed: Base seed
        workers: Frame-level worker count (HPK_WORKERS overrides it)
    """

    name: str = 'run'
    image_width: int = IMAGE_WIDTH
    image_height: int = IMAGE_HEIGHT
    cell_size: int = CELL_SIZE
    architecture: Tuple[LayerSpec, ...] = ()
    train: TrainConfig = field(default_factory=TrainConfig)
    thresholds: ThresholdConfig = field(default_factory=ThresholdConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    autolabel: AutolabelConfig = field(default_factory=AutolabelConfig)
    cameras: Mapping[str, CameraModel] = field(default_factory=lambda: {DEFAULT_CAMERA_ID: CameraModel()})
    synth: SceneConfig = field(default_factory=SceneConfig)
    scenes: int = 1
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if not self.architecture:
            raise ConfigurationError("architecture must list at least one layer")
        if self.image_width < 1 or self.image_height < 1:
            raise ConfigurationError("image_width and image_height must be >= 1")
        if self.scenes < 0 or self.workers < 1:
            raise ConfigurationError("scenes must be >= 0 and workers >= 1")
        if not self.cameras:
            raise ConfigurationError("cameras must define at least one camera")

    @property
    def image_size(self) -> Tuple[int, int]:
        return self.image_width, self.image_height

    @property
    def worker_count(self) -> int:
        return HPK_WORKERS if HPK_WORKERS is not None and HPK_WORKERS > 0 else self.workers

    def camera(self, camera_id: str = DEFAULT_CAMERA_ID) -> CameraModel:
        if camera_id not in self.cameras:
            raise ConfigurationError(f"Unknown camera id {camera_id!r}; configured: {sorted(self.cameras)}")
        return self.cameras[camera_id]

    def to_dict(self) -> Dict[str, Any]:
        return {
            'name': self.name,
            'image_width': self.image_width,
            'image_height': self.image_height,
            'cell_size': self.cell_size,
            'architecture': [spec.to_dict() for spec in self.architecture],
            'train': dataclasses.asdict(self.train),
            'thresholds': dataclasses.asdict(self.thresholds),
            'augment': dataclasses.asdict(self.augment),
            'autolabel': dataclasses.asdict(self.autolabel),
            'cameras': {key: cam.to_dict() for key, cam in self.cameras.items()},
            'synth': self.synth.to_dict(),
            'scenes': self.scenes,
            'seed': self.seed,
            'workers': self.workers,
        }


def _check_type(value: Any, expected: Any, path: str) -> Any:
    """Coerce a JSON value to the annotated field type or raise with its key path"""
    if expected is bool:
        if not isinstance(value, bool):
            raise ConfigurationError(f"{path}: expected a boolean, got {value!r}")
        return value
    if expected is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigurationError(f"{path}: expected an integer, got {value!r}")
        return value
    if expected is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigurationError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if expected is str:
        if not isinstance(value, str):
            raise ConfigurationError(f"{path}: expected a string, got {value!r}")
        return value
    return value


def _nested_floats(value: Any, depth: int, path: str) -> Any:
    if depth == 0:
        return _check_type(value, float, path)
    if not isinstance(value, list):
        raise ConfigurationError(f"{path}: expected a list, got {value!r}")
    return tuple(_nested_floats(item, depth - 1, f"{path}[{i}]") for i, item in enumerate(value))


def _build(cls, data: Any, path: str, nested: Optional[Dict[str, int]] = None):
    """
    Instantiate a flat dataclass from a JSON object

    Args:
        cls: Dataclass type
        data: Parsed JSON object
        path: Key path for error messages
        nested: Fields holding nested lists of numbers, by list depth
    """
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path}: expected an object, got {type(data).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ConfigurationError(f"{path}: unknown keys {unknown}")
    kwargs = {}
    for key, value in data.items():
        key_path = f"{path}.{key}"
        if nested and key in nested:
            kwargs[key] = _nested_floats(value, nested[key], key_path)
        else:
            kwargs[key] = _check_type(value, fields[key].type, key_path)
    try:
        return cls(**kwargs)
    except ConfigurationError as e:
        raise ConfigurationError(f"{path}: {e}")


def _architecture(data: Any) -> Tuple[LayerSpec, ...]:
    if not isinstance(data, list):
        raise ConfigurationError("architecture: expected a list of layers")
    layers = []
    for i, layer in enumerate(data):
        if not isinstance(layer, dict):
            raise ConfigurationError(f"architecture[{i}]: expected an object")
        try:
            layers.append(LayerSpec.from_dict(layer))
        except (ConfigurationError, TypeError) as e:
            raise ConfigurationError(f"architecture[{i}]: {e}")
    return tuple(layers)


def _cameras(data: Any) -> Dict[str, CameraModel]:
    if not isinstance(data, dict):
        raise ConfigurationError("cameras: expected an object of camera id -> camera")
    cameras = {}
    for camera_id, values in data.items():
        if not isinstance(values, dict):
            raise ConfigurationError(f"cameras.{camera_id}: expected an object")
        for key, value in values.items():
            _check_type(value, float, f"cameras.{camera_id}.{key}")
        try:
            cameras[camera_id] = CameraModel.from_dict(values)
        except ConfigurationError as e:
            raise ConfigurationError(f"cameras.{camera_id}: {e}")
    return cameras


def parse_run_config(data: Any) -> RunConfig:
    """Validate a parsed JSON object into a RunConfig"""
    if not isinstance(data, dict):
        raise ConfigurationError("run config: expected a JSON object")
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigurationError(f"run config: unknown keys {unknown}")

    kwargs: Dict[str, Any] = {}
    for key in ('name',):
        if key in data:
            kwargs[key] = _check_type(data[key], str, key)
    for key in ('image_width', 'image_height', 'cell_size', 'scenes', 'seed', 'workers'):
        if key in data:
            kwargs[key] = _check_type(data[key], int, key)
    if 'architecture' in data:
        kwargs['architecture'] = _architecture(data['architecture'])
    if 'train' in data:
        kwargs['train'] = _build(TrainConfig, data['train'], 'train', nested={'class_weights': 1})
    if 'thresholds' in data:
        kwargs['thresholds'] = _build(ThresholdConfig, data['thresholds'], 'thresholds')
    if 'augment' in data:
        kwargs['augment'] = _build(AugmentConfig, data['augment'], 'augment', nested={'displacements': 3})
    if 'autolabel' in data:
        kwargs['autolabel'] = _build(AutolabelConfig, data['autolabel'], 'autolabel')
    if 'cameras' in data:
        kwargs['cameras'] = _cameras(data['cameras'])
    if 'synth' in data:
        kwargs['synth'] = _build(SceneConfig, data['synth'], 'synth')
    return RunConfig(**kwargs)


def load_run_config(path: str) -> RunConfig:
    """
    Load and validate a run configuration file

    Raises:
        FileNotFoundError: If the file does not exist
        ConfigurationError: On invalid JSON, unknown keys, wrong types or ranges
    """
    if not os.path.exists(path):
        raise FileNotFoundError(f"Config file not found: {path}")
    with open(path, 'r', encoding='utf-8') as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"{path}: invalid JSON at line {e.lineno}: {e.msg}")
    return parse_run_config(data)
