"""
Detection heads: one forward pass to a full DetectionGrid, and the training loss
"""
from typing import Optional, Sequence, Tuple

import numpy as np

from detector.types import (
    CLASS_BACKGROUND,
    LANE_SLICE,
    NUM_CLASSES,
    OUTPUT_CHANNELS,
    VEHICLE_SLICE,
    DetectionGrid,
    GridLabel,
    RegressionCodec,
)
from exceptions import ConfigurationError
from geometry.cells import GridGeometry
from nn.layers import softmax
from nn.losses import grid_cross_entropy, l1_loss, l2_loss
from nn.network import Network


def check_output_layout(network: Network, geometry: GridGeometry):
    """Raise unless the network emits the 14-channel cell grid of ``geometry``"""
    if network.out_channels != OUTPUT_CHANNELS:
        raise ConfigurationError(
            f"Detector networks must emit {OUTPUT_CHANNELS} channels per cell, got {network.out_channels}"
        )
    if network.in_channels != 3:
        raise ConfigurationError(f"Detector networks take RGB input, got {network.in_channels} channels")


def decode_output(output: np.ndarray, geometry: GridGeometry, codec: RegressionCodec) -> DetectionGrid:
    """Turn a raw (14, rows, cols) network output into a DetectionGrid"""
    if output.shape != (OUTPUT_CHANNELS,) + geometry.shape:
        raise ConfigurationError(f"Output shape {output.shape} does not match grid {geometry.shape}")
    cx, cy = geometry.centers()
    return DetectionGrid(
        probs=softmax(output[:NUM_CLASSES], axis=0),
        vehicle_reg=codec.decode_vehicle(output[VEHICLE_SLICE], cx, cy),
        lane_reg=codec.decode_lane(output[LANE_SLICE], cx, cy),
        valid=geometry.valid_mask(),
    )


def forward_detect(
    image: np.ndarray,
    network: Network,
    geometry: GridGeometry,
    codec: RegressionCodec,
) -> DetectionGrid:
    """
    Dense detection of one image in a single forward pass

    Args:
        image: float32 array of shape 3xHxW scaled to [0, 1]
        network: Detector network (weights are read, never written)
        geometry: Cell grid for the network input size
        codec: Regression encoding used at training time

    Returns:
        DetectionGrid over the full cell grid
    """
    expected = (3, geometry.image_height, geometry.image_width)
    if image.shape != expected:
        raise ConfigurationError(f"forward_detect expects an image of shape {expected}, got {image.shape}")
    output = network.predict(np.asarray(image, dtype=np.float32))
    return decode_output(output, geometry, codec)


def detection_loss(
    output: np.ndarray,
    label: GridLabel,
    geometry: GridGeometry,
    codec: RegressionCodec,
    reg_weight: float = 1.0,
    class_weights: Optional[Sequence[float]] = None,
    regression: str = 'l1',
) -> Tuple[float, np.ndarray]:
    """
    Mean per-cell cross-entropy plus weighted masked regression loss

    Classification averages over cells inside the image. Each regression
    head averages over its own active cells and channels, in pixels and
    meters: a 1 px error on one of n vehicle cells adds reg_weight / (5 n).

    Args:
        output: Raw network output of shape (14, rows, cols)
        label: Rasterized target
        geometry: Cell grid
        codec: Regression encoding
        reg_weight: Weight of the regression terms
        class_weights: Optional per-class cross-entropy weights
        regression: 'l1' or 'l2'

    Returns:
        Tuple of (loss, gradient with the shape of output)
    """
    if output.shape != (OUTPUT_CHANNELS,) + label.cell_class.shape:
        raise ConfigurationError(f"Output shape {output.shape} does not match label {label.cell_class.shape}")
    if regression not in ('l1', 'l2'):
        raise ConfigurationError(f"Unknown regression loss {regression!r}")
    reg_loss = l1_loss if regression == 'l1' else l2_loss
    weights = None if class_weights is None else np.asarray(class_weights, dtype=np.float64)

    grad = np.zeros(output.shape, dtype=np.float64)
    loss, grad[:NUM_CLASSES] = grid_cross_entropy(
        output[:NUM_CLASSES].astype(np.float64), label.cell_class, valid=label.valid, class_weights=weights
    )

    # scored in pixels and meters; the codec is linear so the gradient scales per channel
    cx, cy = geometry.centers()
    vehicle_pred = codec.decode_vehicle(output[VEHICLE_SLICE].astype(np.float64), cx, cy)
    lane_pred = codec.decode_lane(output[LANE_SLICE].astype(np.float64), cx, cy)
    vehicle_loss, vehicle_grad = reg_loss(vehicle_pred, label.vehicle_reg, label.vehicle_mask)
    lane_loss, lane_grad = reg_loss(lane_pred, label.lane_reg, label.lane_mask)
    grad[VEHICLE_SLICE] = reg_weight * vehicle_grad * codec.channel_scales(1)
    grad[LANE_SLICE] = reg_weight * lane_grad * codec.channel_scales(2)

    total = loss + reg_weight * (vehicle_loss + lane_loss)
    return float(total), grad.astype(output.dtype)


def grid_from_label(label: GridLabel, confidence: float = 1.0) -> DetectionGrid:
    """
    DetectionGrid of a perfect prediction of ``label``

    The true class of each cell gets probability ``confidence`` and the
    remainder is spread evenly over the other classes.
    """
    rows, cols = label.cell_class.shape
    rest = (1.0 - confidence) / (NUM_CLASSES - 1)
    probs = np.full((NUM_CLASSES, rows, cols), rest, dtype=np.float64)
    np.put_along_axis(probs, label.cell_class[np.newaxis], confidence, axis=0)
    probs[:, ~label.valid] = 0.0
    probs[CLASS_BACKGROUND, ~label.valid] = 1.0
    return DetectionGrid(
        probs=probs,
        vehicle_reg=label.vehicle_reg.copy(),
        lane_reg=label.lane_reg.copy(),
        valid=label.valid.copy(),
    )
