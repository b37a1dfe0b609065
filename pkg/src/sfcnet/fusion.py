"""Local/structure information fusion.

Every local center is paired with every skeleton point in a correlation
tensor of channel concatenations; a 1x1 conv stack reduces the pairing
grid back to one vector per center, which is skip-added to the original
embedding and tagged with the center coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import engine
from .engine import Tensor
from .errors import DimensionError, InputError
from .sampling import EmbeddedCloud
from .zorder import SkeletonCloud


@dataclass
class CorrelationTensor:
    """All-pairs concatenation grid: grid[i, j] == concat(x_i, y_j)."""

    grid: Tensor  # (m, n, 2c)
    sources: tuple  # names of the two fused sets

    @property
    def shape(self):
        return self.grid.data.shape


@dataclass
class FusedFeature:
    """Per-center fused feature; the last 3 channels are the raw positions."""

    values: Tensor  # (n, c + 3)


def pairwise_fusion(x: Tensor, y: Tensor, sources=("x", "y")) -> CorrelationTensor:
    """Build the m x n x 2c grid of pairwise channel concatenations."""
    if x.data.ndim != 2 or y.data.ndim != 2:
        raise DimensionError(
            f"pairwise_fusion: expected 2-D inputs, got {x.data.shape} and {y.data.shape}"
        )
    if x.data.shape[1] != y.data.shape[1]:
        raise DimensionError(
            f"pairwise_fusion: channel counts differ: {x.data.shape} vs {y.data.shape}"
        )
    if x.data.shape[0] == 0 or y.data.shape[0] == 0:
        raise InputError("pairwise_fusion: empty input set")
    return CorrelationTensor(grid=engine.pairwise_concat(x, y), sources=sources)


def correlate(embedded: EmbeddedCloud, skeleton: SkeletonCloud):
    """Pair every center with every skeleton point, in feature and in
    coordinate space. Returns (structure grid, position grid)."""
    p_structure = pairwise_fusion(
        embedded.features, skeleton.features, sources=("embedding", "skeleton")
    )
    p_position = pairwise_fusion(
        Tensor(embedded.positions),
        Tensor(skeleton.positions),
        sources=("position", "skeleton_position"),
    )
    return p_structure, p_position


def reduce_correlation(p_structure: CorrelationTensor, p_position: CorrelationTensor, g_layers):
    """Collapse the pairing grids to one feature per center.

    Channel-concatenates the two grids, applies the 1x1 conv stack with a
    ReLU after it, then max-pools over the skeleton axis.
    """
    gs = p_structure.shape
    gp = p_position.shape
    if gs[:2] != gp[:2]:
        raise DimensionError(
            f"reduce_correlation: grids disagree on the pairing axes: {gs} vs {gp}"
        )
    x = engine.concat([p_structure.grid, p_position.grid], axis=2)
    for i, (kernel, bias) in enumerate(g_layers):
        x = engine.conv2d(x, kernel, bias)
        if i + 1 < len(g_layers):
            x = engine.relu(x)
    x = engine.relu(x)
    return engine.pool(x, axis=1, kind="max")


def skip_fuse(embedded: EmbeddedCloud, x_cs: Tensor) -> FusedFeature:
    """Skip connection: concat(embedding + reduced correlation, positions)."""
    if x_cs.data.shape != embedded.features.data.shape:
        raise DimensionError(
            f"skip_fuse: {x_cs.data.shape} vs embedding {embedded.features.data.shape}"
        )
    summed = engine.add(embedded.features, x_cs)
    fused = engine.concat([summed, Tensor(embedded.positions)], axis=1)
    return FusedFeature(values=fused)
