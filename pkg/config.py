"""
Configuration file for the highway perception pipeline
"""
import os
from typing import Optional

from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()


def _env_int(name: str) -> Optional[int]:
    value = os.getenv(name)
    if value is None or value.strip() == '':
        return None
    try:
        return int(value)
    except ValueError:
        raise ValueError(f"Environment variable {name} must be an integer, got {value!r}")


# Runtime
HPK_WORKERS = _env_int('HPK_WORKERS')
HPK_LOG_LEVEL = os.getenv('HPK_LOG_LEVEL', 'INFO')
DATA_DIR = os.getenv('HPK_DATA_DIR', 'data')
CONFIGS_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'configs')
REFERENCE_CONFIG = os.path.join(CONFIGS_DIR, 'reference.json')
DESK_CONFIG = os.path.join(CONFIGS_DIR, 'desk.json')

# Detector geometry
IMAGE_WIDTH = 640
IMAGE_HEIGHT = 480
CELL_SIZE = 4            # pixels per mask cell side
CELLS_PER_FEATURE = 8    # 8x8 softmax classifiers per feature vector
REFERENCE_STRIDE = 32
REFERENCE_CONTEXT = 355

# Regression encoding
DEPTH_SCALE_M = 100.0

# Auto-labeling
LATERAL_MIN_M = 1.4
LATERAL_MAX_M = 2.2
INTENSITY_MIN = 120.0
GROUND_TOL_M = 0.3
KNOT_SPACING_M = 5.0

# Evaluation
IOU_MIN = 0.5
LANE_TOL_M = 0.5
LANE_EVAL_DISTANCES_M = tuple(range(15, 81, 5))
LANE_EVAL_BOUNDARIES = (-2, -1, 1, 2)
DEPTH_BIN_M = 10.0

# File formats
CHECKPOINT_MAGIC = b'HPKW'
CHECKPOINT_VERSION = 1
CLOUD_MAGIC = b'HPKC'
