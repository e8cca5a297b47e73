"""
Fixed layer-sequence network built from LayerSpecs
"""
import logging
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from exceptions import ConfigurationError
from nn.layers import (
    LayerSpec,
    conv2d_backward,
    conv2d_forward,
    grid_backward,
    grid_forward,
    maxpool2d_backward,
    maxpool2d_forward,
    relu_backward,
    relu_forward,
)
from nn.tensor import Tensor, ensure_finite

logger = logging.getLogger(__name__)


def _weight_name(index: int) -> str:
    return f"layer{index}.weight"


def _bias_name(index: int) -> str:
    return f"layer{index}.bias"


class Network:
    """Sequential CNN; weights live in Tensors, kernels are pure functions"""

    def __init__(self, layers: Sequence[LayerSpec], in_channels: int = 3, seed: int = 0):
        """
        Build the network and initialize its weights

        Args:
            layers: Layer specifications in forward order
            in_channels: Channels of the input image
            seed: Seed of the weight initializer
        """
        if not layers:
            raise ConfigurationError("A network needs at least one layer")
        self.layers: Tuple[LayerSpec, ...] = tuple(layers)
        self.in_channels = in_channels
        self.params: Dict[str, Tensor] = {}
        self._caches: Optional[List] = None

        rng = np.random.default_rng(seed)
        channels = in_channels
        for index, spec in enumerate(self.layers):
            if spec.kind == 'conv':
                fan_in = channels * spec.kernel * spec.kernel
                bound = 1.0 / np.sqrt(fan_in)
                weights = rng.uniform(-bound, bound, size=(spec.out_channels, channels, spec.kernel, spec.kernel))
                self.params[_weight_name(index)] = Tensor(weights)
                self.params[_bias_name(index)] = Tensor(np.zeros(spec.out_channels))
                channels = spec.out_channels
            elif spec.kind == 'softmax-grid':
                expected = spec.kernel * spec.kernel * spec.out_channels
                if channels != expected:
                    raise ConfigurationError(
                        f"Layer {index} (softmax-grid) needs {expected} input channels, previous layer gives {channels}"
                    )
                channels = spec.out_channels
        self.out_channels = channels

    # -- parameters -------------------------------------------------------

    def parameters(self) -> Dict[str, np.ndarray]:
        return {name: tensor.data for name, tensor in self.params.items()}

    def gradients(self) -> Dict[str, np.ndarray]:
        self._ensure_grads()
        return {name: tensor.grad for name, tensor in self.params.items()}

    def load_parameters(self, values: Mapping[str, np.ndarray]):
        """Replace weights with arrays of identical names and shapes"""
        missing = set(self.params) - set(values)
        if missing:
            raise ConfigurationError(f"Checkpoint is missing parameters: {sorted(missing)}")
        for name, tensor in self.params.items():
            value = np.asarray(values[name], dtype=np.float32)
            if value.shape != tensor.shape:
                raise ConfigurationError(
                    f"Parameter {name!r} has shape {value.shape}, network expects {tensor.shape}"
                )
            tensor.data[...] = value

    def parameter_count(self) -> int:
        return sum(tensor.size for tensor in self.params.values())

    def _ensure_grads(self):
        for tensor in self.params.values():
            tensor.enable_grad()

    def zero_grad(self):
        self._ensure_grads()
        for tensor in self.params.values():
            tensor.zero_grad()

    # -- forward / backward ----------------------------------------------

    def run(self, x: np.ndarray, params: Mapping[str, np.ndarray], keep_cache: bool = True):
        """
        Pure forward pass with explicit parameters

        Returns:
            Tuple of (output, per-layer caches or None)
        """
        if x.ndim not in (3, 4) or x.shape[-3] != self.in_channels:
            raise ConfigurationError(
                f"Network expects {self.in_channels} input channels, got input of shape {x.shape}"
            )
        caches = [] if keep_cache else None
        out = x
        for index, spec in enumerate(self.layers):
            if spec.kind == 'conv':
                out, cache = conv2d_forward(out, params[_weight_name(index)], params[_bias_name(index)], spec)
            elif spec.kind == 'maxpool':
                out, cache = maxpool2d_forward(out, spec)
            elif spec.kind == 'relu':
                out, cache = relu_forward(out)
            else:
                out, cache = grid_forward(out, spec)
            if keep_cache:
                caches.append(cache)
        return ensure_finite(out, 'network forward'), caches

    def run_backward(self, grad_out: np.ndarray, caches, params: Mapping[str, np.ndarray]):
        """
        Pure backward pass matching ``run``

        Returns:
            Tuple of (gradient with respect to the input, parameter gradients by name)
        """
        grads: Dict[str, np.ndarray] = {}
        grad = grad_out
        for index in reversed(range(len(self.layers))):
            spec = self.layers[index]
            cache = caches[index]
            if spec.kind == 'conv':
                weight_name = _weight_name(index)
                grad, grad_w, grad_b = conv2d_backward(grad, cache, params[weight_name])
                grads[weight_name] = grad_w
                grads[_bias_name(index)] = grad_b
            elif spec.kind == 'maxpool':
                grad = maxpool2d_backward(grad, cache)
            elif spec.kind == 'relu':
                grad = relu_backward(grad, cache)
            else:
                grad = grid_backward(grad, cache, spec)
        return ensure_finite(grad, 'network backward'), grads

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        """
        Forward pass with the network's own weights

        Args:
            x: Input of shape CxHxW or NxCxHxW
            train: Keep activations for a following backward()
        """
        out, caches = self.run(x, self.parameters(), keep_cache=train)
        self._caches = caches if train else None
        return out

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Inference pass; keeps no state, safe for concurrent callers"""
        out, _ = self.run(x, self.parameters(), keep_cache=False)
        return out

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        """Accumulate parameter gradients for the last training forward()"""
        if self._caches is None:
            raise ConfigurationError("backward() requires a preceding forward(train=True)")
        self._ensure_grads()
        grad_in, grads = self.run_backward(grad_out, self._caches, self.parameters())
        for name, grad in grads.items():
            self.params[name].grad += grad
            ensure_finite(self.params[name].grad, f"gradient of {name}")
        self._caches = None
        return grad_in
