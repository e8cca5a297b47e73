"""
Classification and regression losses, each returning (loss, gradient)
"""
from typing import Optional, Tuple

import numpy as np

from exceptions import ConfigurationError
from nn.tensor import ensure_finite


def softmax_cross_entropy(logits: np.ndarray, target: int) -> Tuple[float, np.ndarray]:
    """
    Cross-entropy of a single logit vector against a class index

    Args:
        logits: Vector of K >= 2 class scores
        target: Index of the true class

    Returns:
        Tuple of (loss, gradient with respect to logits)
    """
    logits = np.asarray(logits)
    if logits.ndim != 1 or logits.shape[0] < 2:
        raise ConfigurationError(f"softmax_cross_entropy needs a vector of K >= 2 logits, got shape {logits.shape}")
    loss, grad = grid_cross_entropy(logits[:, np.newaxis], np.array([target]))
    return loss, grad[:, 0]


def grid_cross_entropy(
    logits: np.ndarray,
    targets: np.ndarray,
    valid: Optional[np.ndarray] = None,
    class_weights: Optional[np.ndarray] = None,
) -> Tuple[float, np.ndarray]:
    """
    Mean cross-entropy over many positions, class axis first

    Args:
        logits: Array of shape (K, ...) of class scores
        targets: Integer array of shape (...) with the true class per position
        valid: Optional boolean array of shape (...); invalid positions are ignored
        class_weights: Optional per-class weights applied to each position's loss

    Returns:
        Tuple of (mean loss over valid positions, gradient with the shape of logits)
    """
    k = logits.shape[0]
    if k < 2:
        raise ConfigurationError(f"Cross-entropy needs K >= 2 classes, got {k}")
    targets = np.asarray(targets)
    if targets.shape != logits.shape[1:]:
        raise ConfigurationError(f"Target shape {targets.shape} does not match logits {logits.shape[1:]}")
    if targets.size and (targets.min() < 0 or targets.max() >= k):
        raise ConfigurationError(f"Class target out of range [0, {k})")

    z = logits.astype(np.float64)
    z = z - z.max(axis=0, keepdims=True)
    exp = np.exp(z)
    total = exp.sum(axis=0)
    picked = np.take_along_axis(z, targets[np.newaxis].astype(np.intp), axis=0)[0]
    per_position = np.log(total) - picked

    weight = np.ones(targets.shape, dtype=np.float64)
    if class_weights is not None:
        weight = np.asarray(class_weights, dtype=np.float64)[targets]
    if valid is not None:
        weight = weight * np.asarray(valid, dtype=np.float64)
    count = float(np.count_nonzero(valid)) if valid is not None else float(targets.size)
    if count == 0:
        return 0.0, np.zeros_like(logits)

    loss = float((per_position * weight).sum() / count)
    probs = exp / total
    onehot = np.zeros_like(probs)
    np.put_along_axis(onehot, targets[np.newaxis].astype(np.intp), 1.0, axis=0)
    grad = (probs - onehot) * (weight / count)
    return loss, ensure_finite(grad.astype(logits.dtype), 'cross-entropy gradient')


def _masked(pred: np.ndarray, target: np.ndarray, mask: np.ndarray):
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ConfigurationError(f"Prediction shape {pred.shape} does not match target shape {target.shape}")
    try:
        selected = np.broadcast_to(np.asarray(mask, dtype=bool), pred.shape)
    except ValueError:
        raise ConfigurationError(f"Mask shape {np.shape(mask)} cannot broadcast to {pred.shape}")
    diff = pred.astype(np.float64) - target.astype(np.float64)
    return diff, selected, int(np.count_nonzero(selected))


def l1_loss(pred: np.ndarray, target: np.ndarray, mask: np.ndarray) -> Tuple[float, np.ndarray]:
    """
    Mean absolute error over the masked elements

    The subgradient at zero difference is 0. An empty mask gives loss 0
    and a zero gradient.
    """
    diff, selected, count = _masked(pred, target, mask)
    if count == 0:
        return 0.0, np.zeros_like(pred)
    loss = float(np.abs(diff[selected]).sum() / count)
    grad = np.where(selected, np.sign(diff), 0.0) / count
    return loss, grad.astype(np.asarray(pred).dtype)


def l2_loss(pred: np.ndarray, target: np.ndarray, mask: np.ndarray) -> Tuple[float, np.ndarray]:
    """Mean squared error over the masked elements (the L1 loss' baseline)"""
    diff, selected, count = _masked(pred, target, mask)
    if count == 0:
        return 0.0, np.zeros_like(pred)
    loss = float((diff[selected] ** 2).sum() / count)
    grad = np.where(selected, 2.0 * diff, 0.0) / count
    return loss, grad.astype(np.asarray(pred).dtype)
