"""
Mask cell grid: 8x8 cells of 4x4 pixels per final feature
"""
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from config import CELL_SIZE, CELLS_PER_FEATURE
from exceptions import ConfigurationError
from geometry.receptive_field import ReceptiveField, dense_output_grid, receptive_field
from nn.layers import LayerSpec


@dataclass(frozen=True)
class MaskCell:
    """One 4x4-pixel cell; pixel_rect is half-open (x0, y0, x1, y1)"""

    grid_x: int
    grid_y: int
    pixel_rect: Tuple[int, int, int, int]

    @property
    def center(self) -> Tuple[float, float]:
        x0, y0, x1, y1 = self.pixel_rect
        return (x0 + x1) / 2.0, (y0 + y1) / 2.0


def cell_pixel_region(
    feature_x: int,
    feature_y: int,
    sub_x: int,
    sub_y: int,
    feature_grid: Optional[Tuple[int, int]] = None,
    cells_per_feature: int = CELLS_PER_FEATURE,
    cell_size: int = CELL_SIZE,
) -> MaskCell:
    """
    Cell covered by sub-classifier (sub_x, sub_y) of feature (feature_x, feature_y)

    Args:
        feature_x, feature_y: Feature grid indices
        sub_x, sub_y: Indices in the per-feature cell block, in [0, cells_per_feature)
        feature_grid: Optional (width, height) of the feature grid for bounds checks
        cells_per_feature: Side of the per-feature cell block
        cell_size: Cell side in pixels
    """
    if not (0 <= sub_x < cells_per_feature and 0 <= sub_y < cells_per_feature):
        raise ConfigurationError(f"Sub-cell ({sub_x}, {sub_y}) outside [0, {cells_per_feature})")
    if feature_x < 0 or feature_y < 0:
        raise ConfigurationError(f"Negative feature index ({feature_x}, {feature_y})")
    if feature_grid is not None and (feature_x >= feature_grid[0] or feature_y >= feature_grid[1]):
        raise ConfigurationError(f"Feature ({feature_x}, {feature_y}) outside grid {feature_grid}")

    grid_x = feature_x * cells_per_feature + sub_x
    grid_y = feature_y * cells_per_feature + sub_y
    x0, y0 = grid_x * cell_size, grid_y * cell_size
    return MaskCell(grid_x=grid_x, grid_y=grid_y, pixel_rect=(x0, y0, x0 + cell_size, y0 + cell_size))


@dataclass(frozen=True)
class GridGeometry:
    """
    Image, feature grid and cell grid of one network on one input size

    Cells past the image border (when the image is not a multiple of the
    feature stride) exist in the output but are marked invalid.
    """

    image_width: int
    image_height: int
    feature_width: int
    feature_height: int
    cells_per_feature: int = CELLS_PER_FEATURE
    cell_size: int = CELL_SIZE
    field_x: Optional[ReceptiveField] = None
    field_y: Optional[ReceptiveField] = None

    @classmethod
    def from_layers(
        cls,
        layers: Sequence[LayerSpec],
        image_size: Tuple[int, int],
        cell_size: int = CELL_SIZE,
    ) -> 'GridGeometry':
        """
        Derive the geometry from an architecture ending in a softmax-grid layer

        Raises:
            ConfigurationError: If 8 cells of 4 px do not add up to the feature stride
        """
        width, height = image_size
        grid_layers = [spec for spec in layers if spec.kind == 'softmax-grid']
        if len(grid_layers) != 1 or layers[-1].kind != 'softmax-grid':
            raise ConfigurationError("The architecture must end with exactly one softmax-grid layer")
        cells_per_feature = grid_layers[0].kernel

        feature_width, feature_height = dense_output_grid((width, height), layers)
        field_x = receptive_field(layers, width)
        field_y = receptive_field(layers, height)
        if cells_per_feature * cell_size != field_x.stride:
            raise ConfigurationError(
                f"{cells_per_feature} cells of {cell_size} px do not match the feature stride {field_x.stride}"
            )
        return cls(
            image_width=width,
            image_height=height,
            feature_width=feature_width,
            feature_height=feature_height,
            cells_per_feature=cells_per_feature,
            cell_size=cell_size,
            field_x=field_x,
            field_y=field_y,
        )

    @property
    def cells_x(self) -> int:
        return self.feature_width * self.cells_per_feature

    @property
    def cells_y(self) -> int:
        return self.feature_height * self.cells_per_feature

    @property
    def shape(self) -> Tuple[int, int]:
        """(rows, cols) of the cell grid"""
        return self.cells_y, self.cells_x

    @property
    def feature_stride(self) -> int:
        return self.cells_per_feature * self.cell_size

    @property
    def context(self) -> int:
        return self.field_x.context if self.field_x is not None else 0

    def cell(self, grid_x: int, grid_y: int) -> MaskCell:
        return cell_pixel_region(
            grid_x // self.cells_per_feature,
            grid_y // self.cells_per_feature,
            grid_x % self.cells_per_feature,
            grid_y % self.cells_per_feature,
            feature_grid=(self.feature_width, self.feature_height),
            cells_per_feature=self.cells_per_feature,
            cell_size=self.cell_size,
        )

    def centers(self) -> Tuple[np.ndarray, np.ndarray]:
        """Pixel centers (cx, cy) of every cell, each of shape (rows, cols)"""
        xs = (np.arange(self.cells_x) + 0.5) * self.cell_size
        ys = (np.arange(self.cells_y) + 0.5) * self.cell_size
        cx, cy = np.meshgrid(xs, ys)
        return cx, cy

    def valid_mask(self) -> np.ndarray:
        """Cells whose 4x4 region lies fully inside the image"""
        x1 = (np.arange(self.cells_x) + 1) * self.cell_size
        y1 = (np.arange(self.cells_y) + 1) * self.cell_size
        return (y1[:, np.newaxis] <= self.image_height) & (x1[np.newaxis, :] <= self.image_width)

    def cell_of_pixel(self, x: float, y: float) -> Tuple[int, int]:
        """(grid_x, grid_y) of the cell holding a pixel"""
        return int(x // self.cell_size), int(y // self.cell_size)
