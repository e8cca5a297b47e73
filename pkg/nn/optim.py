"""
Mini-batch SGD with momentum and its learning-rate / momentum schedules
"""
import math
from dataclasses import dataclass, field
from typing import Dict, Mapping, Tuple

import numpy as np

from exceptions import ConfigurationError, NumericError


@dataclass
class OptimState:
    """Optimizer state; velocity buffers mirror the parameter shapes"""

    learning_rate: float
    momentum: float
    velocity: Dict[str, np.ndarray] = field(default_factory=dict)
    step_count: int = 0

    def __post_init__(self):
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigurationError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.learning_rate < 0:
            raise ConfigurationError(f"learning_rate must be >= 0, got {self.learning_rate}")

    @classmethod
    def initial(cls, params: Mapping[str, np.ndarray], learning_rate: float, momentum: float) -> 'OptimState':
        """Zero velocity for every parameter"""
        return cls(
            learning_rate=learning_rate,
            momentum=momentum,
            velocity={name: np.zeros_like(value) for name, value in params.items()},
        )


def sgd_momentum_step(
    params: Dict[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: OptimState,
) -> Tuple[Dict[str, np.ndarray], OptimState]:
    """
    One momentum update, in place: v <- mu * v - lr * g; p <- p + v

    Args:
        params: Parameter arrays by name (updated in place)
        grads: Gradient arrays by name
        state: Optimizer state (velocity updated in place)

    Returns:
        Tuple of (params, state)
    """
    for name, value in params.items():
        grad = grads.get(name)
        if grad is None:
            raise ConfigurationError(f"Missing gradient for parameter {name!r}")
        velocity = state.velocity.get(name)
        if velocity is None:
            velocity = np.zeros_like(value)
            state.velocity[name] = velocity
        if velocity.shape != value.shape or grad.shape != value.shape:
            raise ConfigurationError(f"Shape mismatch for parameter {name!r}")

        update = state.momentum * velocity.astype(np.float64) - state.learning_rate * grad.astype(np.float64)
        velocity[...] = update
        value += update.astype(value.dtype)
        if not np.all(np.isfinite(value)):
            raise NumericError(f"Parameter {name!r} became non-finite at step {state.step_count + 1}")

    state.step_count += 1
    return params, state


@dataclass(frozen=True)
class MomentumSchedule:
    """
    Momentum as a function of the global step

    ``increasing``: mu_t = min(mu_max, 1 - 1 / (floor(t / period) + 2)).
    ``constant``: mu_t = momentum.
    """

    kind: str = 'increasing'
    momentum: float = 0.9
    momentum_max: float = 0.95
    period_steps: int = 250

    def __post_init__(self):
        if self.kind not in ('increasing', 'constant'):
            raise ConfigurationError(f"Unknown momentum schedule {self.kind!r}")
        if not 0.0 <= self.momentum < 1.0 or not 0.0 <= self.momentum_max < 1.0:
            raise ConfigurationError("Momentum values must be in [0, 1)")
        if self.period_steps < 1:
            raise ConfigurationError("period_steps must be >= 1")

    def momentum_at(self, step: int) -> float:
        if self.kind == 'constant':
            return self.momentum
        return min(self.momentum_max, 1.0 - 1.0 / (math.floor(step / self.period_steps) + 2))


@dataclass(frozen=True)
class LearningRateSchedule:
    """Step decay: lr = base * factor ** floor(epoch / every)"""

    base: float = 0.01
    decay_factor: float = 0.5
    decay_every_epochs: int = 5

    def __post_init__(self):
        if self.base <= 0:
            raise ConfigurationError("Learning rate must be > 0")
        if not 0.0 < self.decay_factor <= 1.0:
            raise ConfigurationError("decay_factor must be in (0, 1]")
        if self.decay_every_epochs < 1:
            raise ConfigurationError("decay_every_epochs must be >= 1")

    def rate_at(self, epoch: int) -> float:
        return self.base * self.decay_factor ** (epoch // self.decay_every_epochs)
