"""Point-cloud geometry: unit-cube normalization, grid quantization,
Morton (Z-order) codes, curve-order sorting and equally spaced sampling.

All functions are pure; clouds are immutable value objects.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import InputError

DEFAULT_MORTON_DEPTH = 10  # bits per axis; resolves a 1024^3 grid


@dataclass(frozen=True)
class PointCloud:
    """Raw points with optional unit normals and an optional class label."""

    positions: np.ndarray  # (N, 3) float64
    normals: np.ndarray | None = None
    label: int | None = None

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64)
        object.__setattr__(self, "positions", pos)
        if pos.ndim != 2 or pos.shape[1] != 3 or pos.shape[0] < 1:
            raise InputError(f"point cloud must be (N, 3) with N >= 1, got {pos.shape}")
        if not np.isfinite(pos).all():
            raise InputError("point cloud contains non-finite coordinates")
        if self.normals is not None:
            nrm = np.asarray(self.normals, dtype=np.float64)
            object.__setattr__(self, "normals", nrm)
            if nrm.shape != pos.shape:
                raise InputError(
                    f"normals shape {nrm.shape} does not match positions {pos.shape}"
                )
            lengths = np.linalg.norm(nrm, axis=1)
            if np.any(np.abs(lengths - 1.0) > 1e-6):
                raise InputError("normals must have unit length (tolerance 1e-6)")

    def __len__(self):
        return self.positions.shape[0]


class MortonCode(NamedTuple):
    value: int
    depth: int


def normalize_unit_cube(cloud: PointCloud) -> PointCloud:
    """Translate and uniformly scale into [0,1]^3, preserving aspect ratio.

    The longest axis spans [0,1] exactly; shorter axes are centered. A
    degenerate cloud (all points identical) maps to the cube center.
    """
    pos = cloud.positions
    lo = pos.min(axis=0)
    hi = pos.max(axis=0)
    extent = hi - lo
    span = float(extent.max())
    if span == 0.0:
        out = np.full_like(pos, 0.5)
    else:
        scale = 1.0 / span
        offset = (1.0 - extent * scale) / 2.0
        out = (pos - lo) * scale + offset
    return PointCloud(out, cloud.normals, cloud.label)


def quantize(position, depth: int):
    """Map [0,1]^3 to the integer grid: floor(p * 2^depth), clamped at the top."""
    _check_depth(depth)
    p = np.asarray(position, dtype=np.float64)
    if np.any(p < 0.0) or np.any(p > 1.0):
        raise InputError(f"quantize: position outside [0,1]^3: {position}")
    cells = 1 << depth
    g = np.floor(p * cells).astype(np.int64)
    np.clip(g, 0, cells - 1, out=g)
    if p.ndim == 1:
        return (int(g[0]), int(g[1]), int(g[2]))
    return g


def _check_depth(depth):
    if not 1 <= depth <= 20:
        raise InputError(f"morton depth must be in [1, 20], got {depth}")


# Magic-number bit spreading: moves bit t of a 21-bit value to bit 3t.
_SPREAD = (
    (32, 0x1F00000000FFFF),
    (16, 0x1F0000FF0000FF),
    (8, 0x100F00F00F00F00F),
    (4, 0x10C30C30C30C30C3),
    (2, 0x1249249249249249),
)


def _split3(v):
    v = v & 0x1FFFFF
    for shift, mask in _SPREAD:
        v = (v | (v << shift)) & mask
    return v


def _compact3(v):
    v = v & 0x1249249249249249
    v = (v ^ (v >> 2)) & 0x10C30C30C30C30C3
    v = (v ^ (v >> 4)) & 0x100F00F00F00F00F
    v = (v ^ (v >> 8)) & 0x1F0000FF0000FF
    v = (v ^ (v >> 16)) & 0x1F00000000FFFF
    v = (v ^ (v >> 32)) & 0x1FFFFF
    return v


def morton_encode(grid, depth: int) -> MortonCode:
    """Interleave grid bits MSB-first as (x, y, z) per level.

    Within each 3-bit group the x bit is most significant, so at depth 1
    the code of (x, y, z) is 4x + 2y + z.
    """
    _check_depth(depth)
    x, y, z = (int(c) for c in grid)
    top = 1 << depth
    for c in (x, y, z):
        if not 0 <= c < top:
            raise InputError(f"grid component {c} out of range for depth {depth}")
    value = (_split3(x) << 2) | (_split3(y) << 1) | _split3(z)
    return MortonCode(value, depth)


def morton_decode(code: MortonCode):
    """Inverse of morton_encode: bijective on the depth-sized grid."""
    _check_depth(code.depth)
    if not 0 <= code.value < (1 << (3 * code.depth)):
        raise InputError(f"morton value {code.value} out of range for depth {code.depth}")
    v = int(code.value)
    return (_compact3(v >> 2), _compact3(v >> 1), _compact3(v))


def morton_codes(positions, depth: int = DEFAULT_MORTON_DEPTH):
    """Vectorized Morton codes for an (N, 3) array of [0,1]^3 positions."""
    g = quantize(np.atleast_2d(np.asarray(positions, dtype=np.float64)), depth)
    g = g.astype(np.uint64)
    x = g[:, 0]
    y = g[:, 1]
    z = g[:, 2]

    def split3(v):
        v = v & np.uint64(0x1FFFFF)
        for shift, mask in _SPREAD:
            v = (v | (v << np.uint64(shift))) & np.uint64(mask)
        return v

    return (split3(x) << np.uint64(2)) | (split3(y) << np.uint64(1)) | split3(z)


def morton_order(cloud, depth: int = DEFAULT_MORTON_DEPTH):
    """Indices sorted ascending by Morton code, ties broken by input index.

    Accepts a PointCloud or a bare (N, 3) array; positions must already be
    normalized to [0,1]^3 (raw coordinates are rejected by quantize).
    """
    pos = cloud.positions if isinstance(cloud, PointCloud) else np.asarray(cloud)
    codes = morton_codes(pos, depth)
    return np.lexsort((np.arange(len(codes)), codes))


def equally_spaced_sample(order, count: int):
    """Pick ``count`` evenly spread entries of ``order``.

    Entry i sits at rank position round(i * L / count) (round half up,
    computed in exact integer arithmetic), so the output ranks are
    strictly increasing and the stride follows from the count.
    """
    order = np.asarray(order)
    total = len(order)
    if not 1 <= count <= total:
        raise InputError(f"sample count {count} not in [1, {total}]")
    ranks = np.array([(2 * i * total + count) // (2 * count) for i in range(count)])
    return order[ranks]


# ---------------------------------------------------------------------------
# text formats
#
# One point per line: "x y z" or "x y z nx ny nz", '#' starts a comment line.


def read_cloud(path, label=None) -> PointCloud:
    positions = []
    normals = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) not in (3, 6):
                raise InputError(f"{path}:{lineno}: expected 3 or 6 columns, got {len(parts)}")
            try:
                values = [float(p) for p in parts]
            except ValueError:
                raise InputError(f"{path}:{lineno}: non-numeric value") from None
            positions.append(values[:3])
            if len(parts) == 6:
                normals.append(values[3:])
    if not positions:
        raise InputError(f"{path}: no points")
    if normals and len(normals) != len(positions):
        raise InputError(f"{path}: mixed 3- and 6-column lines")
    return PointCloud(
        np.array(positions), np.array(normals) if normals else None, label
    )


def format_points(positions, normals=None, extra=None, header=None) -> str:
    """Text form, one point per line; optional extra column (e.g. a response)."""
    positions = np.asarray(positions, dtype=np.float64)
    lines = []
    if header:
        lines.append(f"# {header}")
    for i, p in enumerate(positions):
        cols = [f"{v:.17g}" for v in p]
        if normals is not None:
            cols += [f"{v:.17g}" for v in normals[i]]
        if extra is not None:
            cols.append(f"{extra[i]:.17g}")
        lines.append(" ".join(cols))
    return "\n".join(lines) + "\n"


def write_cloud(path, positions, normals=None, extra=None, header=None):
    with open(path, "w") as f:
        f.write(format_points(positions, normals, extra, header))


def load_dataset(root):
    """Directory layout <class-name>/<sample>.xyz; labels follow sorted names.

    Returns (clouds, class_names).
    """
    class_names = sorted(
        d for d in os.listdir(root) if os.path.isdir(os.path.join(root, d))
    )
    if not class_names:
        raise InputError(f"dataset {root}: no class directories")
    clouds = []
    for label, name in enumerate(class_names):
        class_dir = os.path.join(root, name)
        files = sorted(f for f in os.listdir(class_dir) if f.endswith(".xyz"))
        for fname in files:
            clouds.append(read_cloud(os.path.join(class_dir, fname), label=label))
    if not clouds:
        raise InputError(f"dataset {root}: no .xyz samples found")
    return clouds, class_names
