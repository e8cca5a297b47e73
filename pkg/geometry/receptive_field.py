"""
Receptive field and stride arithmetic of the dense sliding-window network
"""
import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from exceptions import ConfigurationError
from nn.layers import LayerSpec

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ReceptiveField:
    """
    Context view of one final feature along one axis

    Attributes:
        context: Side of the context view in pixels
        stride: Pixel step between neighbouring features
        offset: Center of the first feature's context view
        start: First pixel of the first feature's context view (may be negative)
    """

    context: int
    stride: int
    offset: float
    start: int

    def window(self, index: int) -> Tuple[int, int]:
        """Half-open pixel interval seen by feature ``index``"""
        begin = self.start + index * self.stride
        return begin, begin + self.context


def _nominal_pad_before(spec: LayerSpec) -> int:
    # 'same' padding for an extent divisible by the stride
    if spec.padding == 'same':
        return max(spec.kernel - spec.stride, 0) // 2
    return int(spec.padding)


def receptive_field(layers: Sequence[LayerSpec], input_size: Optional[int] = None) -> ReceptiveField:
    """
    Context and stride by the recurrence r <- r + (k - 1) * jump, jump <- jump * s

    Args:
        layers: Layer specifications in forward order
        input_size: Input extent along the axis; needed for the exact offset
            under 'same' padding. Without it, 'same' layers are assumed to
            see extents divisible by their stride.

    Returns:
        ReceptiveField of the last spatial layer
    """
    context, jump, start = 1, 1, 0
    size = input_size
    for spec in layers:
        if not spec.is_spatial:
            continue
        if size is None:
            before = _nominal_pad_before(spec)
        else:
            before = spec.pads(size)[0]
            size = spec.output_size(size)
        start -= before * jump
        context += (spec.kernel - 1) * jump
        jump *= spec.stride
    return ReceptiveField(context=context, stride=jump, offset=start + (context - 1) / 2.0, start=start)


def dense_output_grid(input_size: Tuple[int, int], layers: Sequence[LayerSpec]) -> Tuple[int, int]:
    """
    Feature grid produced by one forward pass over a full image

    Args:
        input_size: (width, height) in pixels
        layers: Layer specifications in forward order

    Returns:
        (width, height) of the final feature map
    """
    width, height = input_size
    if width < 1 or height < 1:
        raise ConfigurationError(f"Input size must be positive, got {input_size}")
    for spec in layers:
        width = spec.output_size(width)
        height = spec.output_size(height)
    return width, height


def feature_context_window(
    feature_x: int,
    feature_y: int,
    field_x: ReceptiveField,
    field_y: ReceptiveField,
) -> Tuple[int, int, int, int]:
    """Pixel rect (x0, y0, x1, y1), half-open, seen by a final feature"""
    x0, x1 = field_x.window(feature_x)
    y0, y1 = field_y.window(feature_y)
    return x0, y0, x1, y1


def _spatial_prefix(layers: Sequence[LayerSpec]) -> Tuple[LayerSpec, ...]:
    prefix = []
    for spec in layers:
        if spec.kind == 'softmax-grid':
            break
        prefix.append(spec)
    return tuple(prefix)


def verify_receptive_field(
    layers: Sequence[LayerSpec],
    input_hw: Tuple[int, int] = (64, 64),
    trials: Optional[int] = None,
    seed: int = 0,
    in_channels: int = 1,
) -> bool:
    """
    Pixel-perturbation oracle for receptive_field

    Builds a random network with strictly positive weights and zero bias,
    feeds a positive image and pushes single pixels up by an amount large
    enough to dominate every path. A feature must change exactly when the
    pixel lies inside its computed context view. Layers after a
    softmax-grid layer are ignored. Every spatial layer needs
    kernel >= stride, otherwise the context view has holes.

    Args:
        layers: Architecture to check
        input_hw: (height, width) of the test image
        trials: Number of pixels to perturb; None sweeps every pixel
        seed: Seed for weights, image and pixel sampling
        in_channels: Channels of the test image

    Returns:
        True if every perturbed pixel matches the computed context views
    """
    from nn.network import Network

    prefix = _spatial_prefix(layers)
    for spec in prefix:
        if spec.is_spatial and spec.kernel < spec.stride:
            raise ConfigurationError(
                f"{spec.kind} k={spec.kernel} s={spec.stride}: oracle requires kernel >= stride"
            )
    height, width = input_hw
    rng = np.random.default_rng(seed)
    network = Network(prefix, in_channels=in_channels, seed=seed)

    params = {}
    spread = 1.0
    channels = in_channels
    for name, value in network.parameters().items():
        if name.endswith('.bias'):
            params[name] = np.zeros(value.shape, dtype=np.float64)
            continue
        fan_in = int(np.prod(value.shape[1:]))
        params[name] = rng.uniform(0.5, 1.0, size=value.shape) / np.sqrt(fan_in)
        spread *= 2.0 * fan_in
        channels = value.shape[0]
    # the smallest path weight times delta exceeds the largest possible base output
    delta = 1e3 * spread

    image = rng.uniform(0.5, 1.0, size=(1, in_channels, height, width))
    base, _ = network.run(image, params, keep_cache=False)
    _, _, out_h, out_w = base.shape

    field_y = receptive_field(prefix, height)
    field_x = receptive_field(prefix, width)
    windows_y = np.array([field_y.window(i) for i in range(out_h)])
    windows_x = np.array([field_x.window(i) for i in range(out_w)])

    pixels = [(py, px) for py in range(height) for px in range(width)]
    if trials is not None and trials < len(pixels):
        picks = rng.choice(len(pixels), size=trials, replace=False)
        pixels = [pixels[i] for i in np.sort(picks)]

    batch_size = 64
    for begin in range(0, len(pixels), batch_size):
        chunk = pixels[begin:begin + batch_size]
        batch = np.repeat(image, len(chunk), axis=0)
        for i, (py, px) in enumerate(chunk):
            batch[i, :, py, px] += delta
        out, _ = network.run(batch, params, keep_cache=False)
        changed = np.any(np.abs(out - base) > 1e-9 * (np.abs(base) + 1.0), axis=1)
        for i, (py, px) in enumerate(chunk):
            inside_y = (windows_y[:, 0] <= py) & (py < windows_y[:, 1])
            inside_x = (windows_x[:, 0] <= px) & (px < windows_x[:, 1])
            expected = inside_y[:, np.newaxis] & inside_x[np.newaxis, :]
            if not np.array_equal(changed[i], expected):
                logger.warning(
                    f"Receptive field mismatch at pixel ({px}, {py}): "
                    f"{int(np.count_nonzero(changed[i] != expected))} features disagree"
                )
                return False
    logger.info(f"Receptive field verified on {len(pixels)} pixels, {out_w}x{out_h} features, {channels} channels")
    return True
