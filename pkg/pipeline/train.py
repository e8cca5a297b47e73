"""
Mini-batch SGD training of the detector network
"""
import logging
import os
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from detector.heads import check_output_layout, detection_loss
from detector.labels import rasterize_labels
from detector.types import FrameLabels, GridLabel, RegressionCodec
from exceptions import ConfigurationError
from geometry.cells import GridGeometry
from nn.checkpoint import load_checkpoint, save_checkpoint
from nn.network import Network
from nn.optim import OptimState, sgd_momentum_step
from pipeline.augment import random_augment
from pipeline.dataset import FrameRecord, read_image, resize_frame, to_network_input
from pipeline.run_config import RunConfig

logger = logging.getLogger(__name__)

CHECKPOINT_NAME = 'checkpoint.hpkw'


def build_detector(config: RunConfig) -> Tuple[Network, GridGeometry, RegressionCodec]:
    """Network, cell grid and regression codec of a run configuration"""
    network = Network(config.architecture, in_channels=3, seed=config.seed)
    geometry = GridGeometry.from_layers(config.architecture, config.image_size, config.cell_size)
    check_output_layout(network, geometry)
    return network, geometry, RegressionCodec(context=float(geometry.context))


@dataclass
class TrainingHistory:
    """Loss of every optimizer step and mean loss of every epoch"""

    step_losses: List[float] = field(default_factory=list)
    epoch_losses: List[float] = field(default_factory=list)

    def smoothed(self, window: int = 10) -> np.ndarray:
        """Moving average of the step losses over ``window`` steps"""
        losses = np.asarray(self.step_losses, dtype=np.float64)
        if len(losses) < window:
            return losses
        return np.convolve(losses, np.ones(window) / window, mode='valid')


class Trainer:
    """Trains a detector on in-memory frames; all randomness comes from train.seed"""

    def __init__(self, config: RunConfig, frames: Sequence[Tuple[np.ndarray, FrameLabels]]):
        """
        Args:
            config: Run configuration
            frames: (H, W, 3) uint8 images with their pixel labels, already at the network input size
        """
        self.config = config
        self.network, self.geometry, self.codec = build_detector(config)
        self.frames = list(frames)
        for index, (image, _) in enumerate(self.frames):
            if image.shape != (config.image_height, config.image_width, 3):
                raise ConfigurationError(f"Frame {index} has shape {image.shape}, expected the network input size")
        train = config.train
        self.state = OptimState.initial(self.network.parameters(), train.learning_rate, train.momentum_at(0))
        self.epoch = 0
        self.history = TrainingHistory()
        self.rng = np.random.default_rng(train.seed)

    def resume(self, path: str):
        """Restore weights, velocity, step count and epoch from a checkpoint"""
        checkpoint = load_checkpoint(path)
        self.network.load_parameters(checkpoint.params)
        for name, velocity in checkpoint.velocity.items():
            if name in self.state.velocity:
                self.state.velocity[name][...] = velocity
        self.state.step_count = int(checkpoint.meta.get('step_count', 0))
        self.epoch = int(checkpoint.meta.get('epoch', 0))
        # advance the data-order stream to the resumed epoch
        self.rng = np.random.default_rng(self.config.train.seed)
        for _ in range(self.epoch):
            self._epoch_plan()
        logger.info(f"Resumed from {path} at epoch {self.epoch}, step {self.state.step_count}")

    def save(self, path: str):
        save_checkpoint(
            path,
            self.network.parameters(),
            velocity=self.state.velocity,
            meta={'step_count': self.state.step_count, 'epoch': self.epoch},
        )

    def _epoch_plan(self) -> List[Tuple[np.ndarray, FrameLabels]]:
        """Shuffled, augmented copies of the frames for one epoch"""
        train = self.config.train
        order = self.rng.permutation(len(self.frames))
        plan = []
        for index in order:
            image, labels = self.frames[int(index)]
            if train.augment:
                image, labels = random_augment(image, labels, self.rng, self.config.augment, train.augment_prob)
            plan.append((image, labels))
        return plan

    def _label(self, labels: FrameLabels) -> GridLabel:
        train = self.config.train
        return rasterize_labels(
            labels.vehicles, labels.lanes, self.geometry,
            shrink=train.shrink, lane_half_width=train.lane_half_width_px,
        )

    def step(self, batch: Sequence[Tuple[np.ndarray, FrameLabels]]) -> float:
        """One forward/backward/update on a mini-batch; returns the mean loss"""
        train = self.config.train
        inputs = np.stack([to_network_input(image) for image, _ in batch])
        outputs = self.network.forward(inputs, train=True)
        grads = np.zeros_like(outputs)
        total = 0.0
        for i, (_, labels) in enumerate(batch):
            loss, grad = detection_loss(
                outputs[i], self._label(labels), self.geometry, self.codec,
                reg_weight=train.reg_weight, class_weights=train.class_weights, regression=train.regression,
            )
            total += loss
            grads[i] = grad / len(batch)

        self.network.zero_grad()
        self.network.backward(grads)
        self.state.learning_rate = train.lr_schedule().rate_at(self.epoch)
        self.state.momentum = train.momentum_at(self.state.step_count)
        sgd_momentum_step(self.network.parameters(), self.network.gradients(), self.state)
        return total / len(batch)

    def run_epoch(self) -> float:
        batch_size = self.config.train.batch_size
        plan = self._epoch_plan()
        losses = []
        for start in range(0, len(plan), batch_size):
            loss = self.step(plan[start:start + batch_size])
            self.history.step_losses.append(loss)
            losses.append(loss)
        mean = float(np.mean(losses)) if losses else 0.0
        self.history.epoch_losses.append(mean)
        self.epoch += 1
        return mean

    def fit(self, epochs: Optional[int] = None, checkpoint_path: Optional[str] = None,
            show_progress: bool = False) -> TrainingHistory:
        """
        Train until ``epochs`` epochs are done in total

        Args:
            epochs: Target epoch count (train.epochs by default)
            checkpoint_path: Checkpoint written after every epoch
            show_progress: Show a progress bar over epochs
        """
        target = self.config.train.epochs if epochs is None else epochs
        if not self.frames:
            logger.warning("No training frames; nothing to do")
            return self.history
        bar = tqdm(range(self.epoch, target), desc="Training", disable=not show_progress)
        for _ in bar:
            loss = self.run_epoch()
            bar.set_postfix(loss=f"{loss:.4f}")
            logger.info(f"Epoch {self.epoch}/{target}: loss {loss:.6f} (step {self.state.step_count})")
            if checkpoint_path:
                self.save(checkpoint_path)
        return self.history


def load_frames(records: Sequence[FrameRecord], config: RunConfig) -> List[Tuple[np.ndarray, FrameLabels]]:
    """Read and resize every record's image to the network input size"""
    return [resize_frame(read_image(record.image), record.labels, config.image_size) for record in records]


def run_train(
    config: RunConfig,
    records: Sequence[FrameRecord],
    out_dir: str,
    resume: Optional[str] = None,
    show_progress: bool = True,
) -> Tuple[str, TrainingHistory]:
    """
    Train a detector on a dataset and write its checkpoint

    Args:
        config: Run configuration
        records: Training frames
        out_dir: Output directory
        resume: Checkpoint to continue from
        show_progress: Show a progress bar

    Returns:
        Tuple of (checkpoint path, training history)
    """
    trainer = Trainer(config, load_frames(records, config))
    if resume:
        trainer.resume(resume)
    path = os.path.join(out_dir, CHECKPOINT_NAME)
    history = trainer.fit(checkpoint_path=path, show_progress=show_progress)
    if not os.path.exists(path):
        trainer.save(path)
    logger.info(f"Trained {trainer.epoch} epochs, {trainer.state.step_count} steps: {path}")
    return path, history
