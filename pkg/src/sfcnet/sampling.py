"""Farthest-point sampling, radius grouping and the local embedding block.

FPS is seeded from the minimum Morton code rather than index 0, and every
tie is broken by (Morton code, coordinates): the selected sequence is then
a function of the point multiset alone, which makes the whole downstream
pipeline permutation-invariant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import engine
from .engine import Tensor
from .errors import InputError
from .geometry import (
    DEFAULT_MORTON_DEPTH,
    PointCloud,
    morton_codes,
    normalize_unit_cube,
)


@dataclass
class EmbeddedCloud:
    """Sampled centers: absolute positions plus pooled neighborhood features."""

    positions: np.ndarray  # (n, 3)
    features: Tensor  # (n, c)

    def __post_init__(self):
        if self.positions.shape[0] != self.features.data.shape[0]:
            raise InputError(
                f"positions {self.positions.shape} / features "
                f"{self.features.data.shape} row counts differ"
            )
        if not np.isfinite(self.features.data).all():
            raise InputError("embedded features contain non-finite values")

    def __len__(self):
        return self.positions.shape[0]


@dataclass
class GroupedNeighborhood:
    """Fixed-size radius group around one center.

    Slot 0 is the center itself; unfilled slots replicate the center and
    are marked in pad_mask (True = padded replica).
    """

    center_index: int
    member_indices: np.ndarray  # (K,)
    relative_positions: np.ndarray  # (K, 3)
    pad_mask: np.ndarray  # (K,) bool


def _tie_break_codes(positions, depth):
    """Morton codes of the internally normalized positions, for tie-breaks."""
    cloud = normalize_unit_cube(PointCloud(positions))
    return morton_codes(cloud.positions, depth)


def fps(cloud: PointCloud, k: int, depth: int = DEFAULT_MORTON_DEPTH):
    """Greedy farthest-point sampling; returns k distinct indices.

    The first pick is the point with minimum Morton code; each later pick
    maximizes the minimum squared distance to everything already chosen.
    Ties fall back to smaller Morton code, then lexicographically smaller
    coordinates, then smaller input index.
    """
    pos = cloud.positions
    n = len(cloud)
    if not 1 <= k <= n:
        raise InputError(f"fps: k={k} not in [1, {n}]")
    codes = _tie_break_codes(pos, depth)
    idx = np.arange(n)
    # full tie-break ordering: (morton, x, y, z, index)
    rank_of = np.empty(n, dtype=np.int64)
    rank_of[np.lexsort((idx, pos[:, 2], pos[:, 1], pos[:, 0], codes))] = np.arange(n)

    selected = np.empty(k, dtype=np.intp)
    selected[0] = int(np.argmin(rank_of))
    min_d2 = np.sum((pos - pos[selected[0]]) ** 2, axis=1)
    min_d2[selected[0]] = -1.0  # sentinel keeps chosen indices out of the running
    for i in range(1, k):
        best = np.max(min_d2)
        candidates = np.flatnonzero(min_d2 == best)
        selected[i] = candidates[np.argmin(rank_of[candidates])]
        d2 = np.sum((pos - pos[selected[i]]) ** 2, axis=1)
        np.minimum(min_d2, d2, out=min_d2)
        min_d2[selected[i]] = -1.0
    return selected


def ball_query(
    cloud: PointCloud,
    centers,
    r: float,
    k_members: int,
    depth: int = DEFAULT_MORTON_DEPTH,
):
    """Radius-bounded groups: per center, up to K points with distance < r.

    Members come nearest-first (ties by Morton code, then input index);
    short groups are padded by replicating the center.
    """
    centers = np.asarray(centers, dtype=np.intp)
    if centers.size == 0:
        raise InputError("ball_query: empty center list")
    if r <= 0:
        raise InputError(f"ball_query: radius must be positive, got {r}")
    if k_members < 1:
        raise InputError(f"ball_query: K must be >= 1, got {k_members}")
    pos = cloud.positions
    codes = _tie_break_codes(pos, depth)
    idx = np.arange(len(cloud))
    groups = []
    for c in centers:
        d2 = np.sum((pos - pos[c]) ** 2, axis=1)
        inside = np.flatnonzero((d2 < r * r) & (idx != c))
        order = inside[np.lexsort((inside, codes[inside], d2[inside]))]
        members = np.concatenate(([c], order))[:k_members]
        pad = k_members - len(members)
        pad_mask = np.zeros(k_members, dtype=bool)
        if pad:
            members = np.concatenate((members, np.full(pad, c, dtype=np.intp)))
            pad_mask[k_members - pad :] = True
        groups.append(
            GroupedNeighborhood(
                center_index=int(c),
                member_indices=members,
                relative_positions=pos[members] - pos[c],
                pad_mask=pad_mask,
            )
        )
    return groups


def set_abstraction(
    cloud: PointCloud,
    n_centers: int,
    r: float,
    k_members: int,
    mlp_layers,
    use_normals: bool = False,
    depth: int = DEFAULT_MORTON_DEPTH,
) -> EmbeddedCloud:
    """Embed each FPS center from its radius group.

    Member relative coordinates (plus normals when requested) run through
    a shared per-member MLP; the raw relative coordinates are concatenated
    back and a max pool over the group gives one feature per center, so
    the output width is mlp_out + 3.
    """
    center_idx = fps(cloud, n_centers, depth)
    groups = ball_query(cloud, center_idx, r, k_members, depth)

    rel = np.stack([g.relative_positions for g in groups])  # (n, K, 3)
    if use_normals:
        if cloud.normals is None:
            raise InputError("set_abstraction: use_normals requires normals")
        member_normals = np.stack([cloud.normals[g.member_indices] for g in groups])
        raw = np.concatenate([rel, member_normals], axis=2)
    else:
        raw = rel
    n, k, c_in = raw.shape

    flat = Tensor(raw.reshape(n * k, c_in))
    conv = engine.shared_mlp(flat, mlp_layers)
    conv = engine.reshape(conv, (n, k, conv.data.shape[1]))
    grouped = engine.concat([conv, Tensor(rel)], axis=2)
    pooled = engine.pool(grouped, axis=1, kind="max")
    return EmbeddedCloud(positions=cloud.positions[center_idx], features=pooled)
