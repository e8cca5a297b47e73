"""
Dense float32 tensor with an optional gradient buffer
"""
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from exceptions import ConfigurationError, NumericError


def ensure_finite(array: np.ndarray, where: str) -> np.ndarray:
    """
    Raise NumericError if an array holds NaN or Inf

    Args:
        array: Array to check
        where: Name of the producing operation, used in the message

    Returns:
        The same array
    """
    if not np.all(np.isfinite(array)):
        bad = int(np.size(array) - np.count_nonzero(np.isfinite(array)))
        raise NumericError(f"{where}: {bad} non-finite values")
    return array


@dataclass
class Tensor:
    """Row-major float32 storage plus a same-shape gradient in training mode"""

    data: np.ndarray
    grad: Optional[np.ndarray] = None

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        if any(dim <= 0 for dim in self.data.shape):
            raise ConfigurationError(f"Tensor dimensions must be positive, got {self.data.shape}")
        if self.grad is not None:
            self.grad = np.ascontiguousarray(self.grad, dtype=np.float32)
            if self.grad.shape != self.data.shape:
                raise ConfigurationError(
                    f"Gradient shape {self.grad.shape} does not match data shape {self.data.shape}"
                )

    @classmethod
    def zeros(cls, shape: Sequence[int], requires_grad: bool = False) -> 'Tensor':
        data = np.zeros(tuple(shape), dtype=np.float32)
        return cls(data, np.zeros_like(data) if requires_grad else None)

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def requires_grad(self) -> bool:
        return self.grad is not None

    def enable_grad(self):
        """Allocate a zero gradient buffer (training mode)"""
        if self.grad is None:
            self.grad = np.zeros_like(self.data)

    def zero_grad(self):
        if self.grad is not None:
            self.grad.fill(0.0)

    def check_finite(self, where: str) -> 'Tensor':
        ensure_finite(self.data, f"{where} (data)")
        if self.grad is not None:
            ensure_finite(self.grad, f"{where} (grad)")
        return self

    def copy(self) -> 'Tensor':
        return Tensor(self.data.copy(), None if self.grad is None else self.grad.copy())
