"""Curve-guided downsampling: pick the skeleton subset of embedded centers
by walking the Morton order at a stride derived from the requested count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import engine
from .engine import Tensor
from .errors import InputError
from .geometry import DEFAULT_MORTON_DEPTH, equally_spaced_sample, morton_order
from .sampling import EmbeddedCloud


@dataclass
class SkeletonCloud:
    """Structure-bearing subset of an embedded cloud.

    Rows follow increasing curve rank; source_indices map each row back to
    the embedded cloud it was taken from.
    """

    positions: np.ndarray  # (m, 3)
    features: Tensor  # (m, c)
    source_indices: np.ndarray  # (m,)

    def __post_init__(self):
        m = self.positions.shape[0]
        if self.features.data.shape[0] != m or self.source_indices.shape[0] != m:
            raise InputError("skeleton rows out of sync with source indices")

    def __len__(self):
        return self.positions.shape[0]


def skeleton_from_indices(embedded: EmbeddedCloud, indices) -> SkeletonCloud:
    """Carry positions and feature rows of the selected centers, unchanged."""
    indices = np.asarray(indices, dtype=np.intp)
    return SkeletonCloud(
        positions=embedded.positions[indices],
        features=engine.take_rows(embedded.features, indices),
        source_indices=indices,
    )


def zorder_sample(
    embedded: EmbeddedCloud, count: int, depth: int = DEFAULT_MORTON_DEPTH
) -> SkeletonCloud:
    """Sort centers along the Z-order curve and keep ``count`` evenly spread ones.

    Selection happens in coordinate space; features tag along by index.
    Positions must be normalized to [0,1]^3 (enforced by the encoder).
    """
    if not 1 <= count <= len(embedded):
        raise InputError(f"zorder_sample: count {count} not in [1, {len(embedded)}]")
    order = morton_order(embedded.positions, depth)
    return skeleton_from_indices(embedded, equally_spaced_sample(order, count))
