"""
Layer specifications and the forward/backward kernels of the fixed-sequence CNN

All kernels take NCHW arrays (a single CHW image is promoted to a batch of
one and squeezed back), keep the input dtype for storage and accumulate
reductions in float64.
"""
import math
from dataclasses import asdict, dataclass
from typing import Any, Dict, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from exceptions import ConfigurationError
from nn.tensor import ensure_finite

LAYER_KINDS = ('conv', 'maxpool', 'relu', 'softmax-grid')

Pads = Tuple[int, int]


@dataclass(frozen=True)
class LayerSpec:
    """
    One layer of the network

    For ``softmax-grid`` the kernel is the side of the sub-cell grid each
    feature vector is spread over and ``out_channels`` the channel count of
    every cell.
    """

    kind: str
    kernel: int = 1
    stride: int = 1
    padding: Union[int, str] = 0
    out_channels: int = 0

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ConfigurationError(f"Unknown layer kind {self.kind!r}; expected one of {LAYER_KINDS}")
        if not isinstance(self.kernel, int) or self.kernel < 1:
            raise ConfigurationError(f"{self.kind}: kernel must be >= 1, got {self.kernel}")
        if not isinstance(self.stride, int) or self.stride < 1:
            raise ConfigurationError(f"{self.kind}: stride must be >= 1, got {self.stride}")
        if isinstance(self.padding, str):
            if self.padding != 'same':
                raise ConfigurationError(f"{self.kind}: padding must be an integer or 'same', got {self.padding!r}")
        elif not isinstance(self.padding, int) or self.padding < 0:
            raise ConfigurationError(f"{self.kind}: padding must be >= 0, got {self.padding}")
        if self.kind in ('conv', 'softmax-grid') and self.out_channels < 1:
            raise ConfigurationError(f"{self.kind}: out_channels must be >= 1")

    @property
    def is_spatial(self) -> bool:
        """True for layers that move the sampling grid (conv, maxpool)"""
        return self.kind in ('conv', 'maxpool')

    def output_size(self, size: int) -> int:
        """Output extent along one axis for an input extent"""
        if not self.is_spatial:
            return size
        if self.padding == 'same':
            out = math.ceil(size / self.stride)
        else:
            out = (size + 2 * self.padding - self.kernel) // self.stride + 1
        if out < 1:
            raise ConfigurationError(
                f"{self.kind} k={self.kernel} s={self.stride} p={self.padding} "
                f"produces an empty output from input extent {size}"
            )
        return out

    def pads(self, size: int) -> Pads:
        """(before, after) zero padding along one axis for an input extent"""
        if not self.is_spatial:
            return 0, 0
        if self.padding == 'same':
            out = self.output_size(size)
            total = max((out - 1) * self.stride + self.kernel - size, 0)
            return total // 2, total - total // 2
        return self.padding, self.padding

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'LayerSpec':
        unknown = set(data) - {'kind', 'kernel', 'stride', 'padding', 'out_channels'}
        if unknown:
            raise ConfigurationError(f"Unknown layer keys: {sorted(unknown)}")
        return cls(**data)


def _as_batch(x: np.ndarray) -> Tuple[np.ndarray, bool]:
    if x.ndim == 3:
        return x[np.newaxis], True
    if x.ndim == 4:
        return x, False
    raise ConfigurationError(f"Expected a CxHxW or NxCxHxW array, got shape {x.shape}")


def _strided_windows(xp: np.ndarray, kernel: int, stride: int, out_h: int, out_w: int) -> np.ndarray:
    windows = sliding_window_view(xp, (kernel, kernel), axis=(2, 3))
    return windows[:, :, : (out_h - 1) * stride + 1: stride, : (out_w - 1) * stride + 1: stride]


# ---------------------------------------------------------------------------
# Convolution
# ---------------------------------------------------------------------------

def conv2d_forward(x: np.ndarray, weights: np.ndarray, bias: np.ndarray, spec: LayerSpec):
    """
    Cross-correlation by im2col + GEMM

    Args:
        x: Input of shape CxHxW or NxCxHxW
        weights: Kernels of shape OxCxkxk
        bias: Bias of shape O
        spec: Layer specification (kernel, stride, padding)

    Returns:
        Tuple of (output, cache for conv2d_backward)
    """
    x4, squeeze = _as_batch(x)
    n, c, h, w = x4.shape
    if weights.ndim != 4 or weights.shape[1] != c or weights.shape[2] != spec.kernel or weights.shape[3] != spec.kernel:
        raise ConfigurationError(
            f"conv2d: weights {weights.shape} incompatible with input channels {c} and kernel {spec.kernel}"
        )
    o = weights.shape[0]
    if bias.shape != (o,):
        raise ConfigurationError(f"conv2d: bias shape {bias.shape} does not match {o} output channels")

    pads_h, pads_w = spec.pads(h), spec.pads(w)
    out_h, out_w = spec.output_size(h), spec.output_size(w)
    xp = np.pad(x4, ((0, 0), (0, 0), pads_h, pads_w))
    cols = _strided_windows(xp, spec.kernel, spec.stride, out_h, out_w)
    cols = cols.transpose(0, 2, 3, 1, 4, 5).reshape(n * out_h * out_w, c * spec.kernel * spec.kernel)
    cols = cols.astype(np.float64, copy=False)

    kernel_matrix = weights.reshape(o, -1).astype(np.float64, copy=False)
    acc = cols @ kernel_matrix.T + bias.astype(np.float64, copy=False)
    y = acc.astype(x4.dtype).reshape(n, out_h, out_w, o).transpose(0, 3, 1, 2)
    y = ensure_finite(np.ascontiguousarray(y), 'conv2d')

    cache = (cols, x4.shape, xp.shape, pads_h, pads_w, out_h, out_w, spec.kernel, spec.stride, squeeze)
    return (y[0] if squeeze else y), cache


def conv2d_backward(grad_out: np.ndarray, cache, weights: np.ndarray):
    """
    Gradients of conv2d_forward

    Returns:
        Tuple of (grad_input, grad_weights, grad_bias)
    """
    cols, x_shape, xp_shape, pads_h, pads_w, out_h, out_w, kernel, stride, squeeze = cache
    dtype = weights.dtype
    dy = grad_out[np.newaxis] if squeeze else grad_out
    n, c, h, w = x_shape
    o = weights.shape[0]

    dy_cols = dy.transpose(0, 2, 3, 1).reshape(-1, o).astype(np.float64)
    grad_w = (dy_cols.T @ cols).reshape(weights.shape)
    grad_b = dy_cols.sum(axis=0)

    dcols = dy_cols @ weights.reshape(o, -1).astype(np.float64, copy=False)
    dcols = dcols.reshape(n, out_h, out_w, c, kernel, kernel).transpose(0, 3, 4, 5, 1, 2)
    dxp = np.zeros(xp_shape, dtype=np.float64)
    span_h = stride * (out_h - 1) + 1
    span_w = stride * (out_w - 1) + 1
    for i in range(kernel):
        for j in range(kernel):
            dxp[:, :, i:i + span_h:stride, j:j + span_w:stride] += dcols[:, :, i, j]
    dx = dxp[:, :, pads_h[0]:pads_h[0] + h, pads_w[0]:pads_w[0] + w].astype(dtype)

    ensure_finite(dx, 'conv2d backward')
    dx = dx[0] if squeeze else np.ascontiguousarray(dx)
    return dx, grad_w.astype(dtype), grad_b.astype(dtype)


def conv2d(input: np.ndarray, weights: np.ndarray, bias: np.ndarray, spec: LayerSpec) -> np.ndarray:
    """Forward-only convolution"""
    y, _ = conv2d_forward(input, weights, bias, spec)
    return y


# ---------------------------------------------------------------------------
# Max pooling
# ---------------------------------------------------------------------------

def maxpool2d_forward(x: np.ndarray, spec: LayerSpec):
    """
    Max pooling; padded positions never win

    Ties resolve to the lowest linear index inside the window.
    """
    x4, squeeze = _as_batch(x)
    n, c, h, w = x4.shape
    pads_h, pads_w = spec.pads(h), spec.pads(w)
    out_h, out_w = spec.output_size(h), spec.output_size(w)
    xp = np.pad(x4, ((0, 0), (0, 0), pads_h, pads_w), constant_values=-np.inf)
    windows = _strided_windows(xp, spec.kernel, spec.stride, out_h, out_w)
    windows = windows.reshape(n, c, out_h, out_w, spec.kernel * spec.kernel)
    argmax = windows.argmax(axis=-1)
    y = np.take_along_axis(windows, argmax[..., np.newaxis], axis=-1)[..., 0]
    y = ensure_finite(np.ascontiguousarray(y), 'maxpool2d')

    cache = (argmax, x4.shape, xp.shape, pads_h, pads_w, spec.kernel, spec.stride, squeeze)
    return (y[0] if squeeze else y), cache


def maxpool2d_backward(grad_out: np.ndarray, cache) -> np.ndarray:
    argmax, x_shape, xp_shape, pads_h, pads_w, kernel, stride, squeeze = cache
    dy = grad_out[np.newaxis] if squeeze else grad_out
    n, c, h, w = x_shape
    bn, bc, oy, ox = np.indices(argmax.shape)
    rows = oy * stride + argmax // kernel
    cols = ox * stride + argmax % kernel
    dxp = np.zeros(xp_shape, dtype=np.float64)
    np.add.at(dxp, (bn, bc, rows, cols), dy.astype(np.float64))
    dx = dxp[:, :, pads_h[0]:pads_h[0] + h, pads_w[0]:pads_w[0] + w].astype(grad_out.dtype)
    return dx[0] if squeeze else np.ascontiguousarray(dx)


def maxpool2d(input: np.ndarray, spec: LayerSpec) -> np.ndarray:
    """Forward-only max pooling"""
    y, _ = maxpool2d_forward(input, spec)
    return y


# ---------------------------------------------------------------------------
# ReLU
# ---------------------------------------------------------------------------

def relu_forward(x: np.ndarray):
    mask = x > 0
    return np.where(mask, x, 0).astype(x.dtype), mask


def relu_backward(grad_out: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return np.where(mask, grad_out, 0).astype(grad_out.dtype)


# ---------------------------------------------------------------------------
# Feature vector -> cell grid
# ---------------------------------------------------------------------------

def grid_forward(x: np.ndarray, spec: LayerSpec):
    """
    Spread every feature vector over a GxG block of cells

    Input channel ``(sy * G + sx) * D + d`` of feature (fy, fx) becomes
    channel ``d`` of cell (fy * G + sy, fx * G + sx).
    """
    x4, squeeze = _as_batch(x)
    n, channels, fh, fw = x4.shape
    g, d = spec.kernel, spec.out_channels
    if channels != g * g * d:
        raise ConfigurationError(
            f"softmax-grid expects {g}x{g}x{d}={g * g * d} input channels, got {channels}"
        )
    y = x4.reshape(n, g, g, d, fh, fw).transpose(0, 3, 4, 1, 5, 2).reshape(n, d, fh * g, fw * g)
    y = np.ascontiguousarray(y)
    return (y[0] if squeeze else y), (x4.shape, squeeze)


def grid_backward(grad_out: np.ndarray, cache, spec: LayerSpec) -> np.ndarray:
    x_shape, squeeze = cache
    dy = grad_out[np.newaxis] if squeeze else grad_out
    n, _, fh, fw = x_shape
    g, d = spec.kernel, spec.out_channels
    dx = dy.reshape(n, d, fh, g, fw, g).transpose(0, 3, 5, 1, 2, 4).reshape(x_shape)
    dx = np.ascontiguousarray(dx)
    return dx[0] if squeeze else dx


# ---------------------------------------------------------------------------
# Softmax
# ---------------------------------------------------------------------------

def softmax(logits: np.ndarray, axis: int = 0) -> np.ndarray:
    """Numerically stable softmax, computed in float64"""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)
