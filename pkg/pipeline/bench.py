"""
Per-stage latency benchmark of the detection pipeline and the merge-cost sweep
"""
import json
import logging
import os
import time
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from detector.types import VehicleBox
from exceptions import ConfigurationError
from pipeline.dataset import FrameRecord, read_image
from pipeline.infer import STAGES, DetectionPipeline
from pipeline.run_config import RunConfig
from pipeline.train import build_detector
from postprocess.merge import MergeParams, merge_boxes

logger = logging.getLogger(__name__)

DEFAULT_SWEEP = (64, 128, 256, 512, 1024)
HARDWARE_NOTE = (
    "Wall-clock timings of this CPU implementation. Frame rates depend on the "
    "hardware and are reported, never asserted."
)


@dataclass
class StageTiming:
    """Wall-clock samples of one stage in seconds"""

    name: str
    samples: List[float] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        ms = np.asarray(self.samples, dtype=np.float64) * 1e3
        if len(ms) == 0:
            return {'stage': self.name, 'n': 0}
        mean = float(ms.mean())
        return {
            'stage': self.name,
            'n': int(len(ms)),
            'mean_ms': mean,
            'median_ms': float(np.median(ms)),
            'p95_ms': float(np.percentile(ms, 95)),
            'hz': 1e3 / mean if mean > 0 else None,
        }


@dataclass
class BenchReport:
    stages: Dict[str, StageTiming]
    merge_sweep: List[Dict[str, float]]
    merge_exponent: float
    metadata: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'stages': [timing.to_dict() for timing in self.stages.values()],
            'merge_sweep': self.merge_sweep,
            'merge_exponent': self.merge_exponent,
            'metadata': self.metadata,
            'note': HARDWARE_NOTE,
        }

    def write_json(self, path: str):
        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)


def synthetic_candidates(n: int, rng: np.random.Generator, per_cluster: int = 8,
                         size: Sequence[int] = (640, 480)) -> List[VehicleBox]:
    """``n`` candidate boxes in clusters of ``per_cluster`` jittered copies"""
    width, height = size
    boxes = []
    while len(boxes) < n:
        w, h = rng.uniform(20, 120), rng.uniform(15, 90)
        x1, y1 = rng.uniform(0, width - w), rng.uniform(0, height - h)
        depth = rng.uniform(5, 80)
        for _ in range(min(per_cluster, n - len(boxes))):
            jitter = rng.uniform(-0.02, 0.02, size=4) * (w + h) / 2
            boxes.append(VehicleBox(
                x1 + jitter[0], y1 + jitter[1], x1 + w + jitter[2], y1 + h + jitter[3], depth, 0.9
            ))
    return boxes


def merge_sweep(
    counts: Sequence[int] = DEFAULT_SWEEP,
    params: MergeParams = MergeParams(),
    repeat: int = 3,
    seed: int = 0,
) -> Tuple[List[Dict[str, float]], float]:
    """
    Time merge_boxes over growing candidate counts

    Returns:
        Tuple of (rows of {n, ms}, fitted exponent of time against n on log-log axes)
    """
    if len(counts) < 2:
        raise ConfigurationError("A merge sweep needs at least 2 candidate counts")
    rng = np.random.default_rng(seed)
    rows = []
    for n in counts:
        boxes = synthetic_candidates(int(n), rng)
        merge_boxes(boxes, params)
        best = min(_timed(lambda: merge_boxes(boxes, params)) for _ in range(max(repeat, 1)))
        rows.append({'n': int(n), 'ms': best * 1e3})
    x = np.log([row['n'] for row in rows])
    y = np.log([max(row['ms'], 1e-6) for row in rows])
    exponent = float(np.polyfit(x, y, 1)[0])
    return rows, exponent


def _timed(fn) -> float:
    start = time.perf_counter()
    fn()
    return time.perf_counter() - start


def run_bench(
    config: RunConfig,
    records: Sequence[FrameRecord],
    checkpoint_path: Optional[str] = None,
    repeat: int = 1,
    sweep: Sequence[int] = DEFAULT_SWEEP,
    out_path: Optional[str] = None,
    show_progress: bool = True,
) -> BenchReport:
    """
    Time every pipeline stage on each frame ``repeat`` times

    Frames run sequentially on one thread. Without a checkpoint the
    network keeps its seeded initial weights.

    Args:
        config: Run configuration
        records: Frames to time
        checkpoint_path: Trained weights (optional)
        repeat: Passes over the frames
        sweep: Candidate counts of the merge sweep
        out_path: JSON report path
        show_progress: Show a progress bar

    Returns:
        BenchReport
    """
    if repeat < 1:
        raise ConfigurationError(f"repeat must be >= 1, got {repeat}")
    if checkpoint_path:
        pipeline = DetectionPipeline.from_checkpoint(config, checkpoint_path)
    else:
        pipeline = DetectionPipeline(config, *build_detector(config))

    frames = [(read_image(record.image), record) for record in records]
    stages = {name: StageTiming(name) for name in STAGES + ('total',)}
    runs = [frame for _ in range(repeat) for frame in frames]
    for image, record in tqdm(runs, desc="Benchmarking", disable=not show_progress):
        result = pipeline.detect(image, record.frame_id, config.camera(record.camera_id))
        for name in STAGES:
            stages[name].samples.append(result.timings[name])
        stages['total'].samples.append(sum(result.timings.values()))

    rows, exponent = merge_sweep(sweep, config.thresholds.merge_params(), seed=config.seed)
    report = BenchReport(
        stages=stages,
        merge_sweep=rows,
        merge_exponent=exponent,
        metadata={'frames': len(frames), 'repeat': repeat, 'image_size': list(config.image_size)},
    )
    total = stages['total'].to_dict()
    if total.get('n'):
        logger.info(f"Pipeline: {total['mean_ms']:.1f} ms mean, {total['hz']:.1f} Hz; merge exponent {exponent:.2f}")
    if out_path:
        report.write_json(out_path)
    return report
