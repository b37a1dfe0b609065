"""Synthetic desk-scale datasets: spheres vs cubes for classification and
two-part composite clouds for segmentation.
"""

from __future__ import annotations

import numpy as np

from .geometry import PointCloud


def sphere_cloud(n_points, rng, center=(0.0, 0.0, 0.0), radius=1.0, label=0):
    """Points uniform on a sphere surface (normalized Gaussian draws)."""
    v = rng.normal(size=(n_points, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return PointCloud(np.asarray(center) + radius * v, label=label)


def cube_cloud(n_points, rng, center=(0.0, 0.0, 0.0), half=1.0, label=1):
    """Points uniform on the surface of an axis-aligned cube."""
    face = rng.integers(0, 6, size=n_points)
    uv = rng.uniform(-half, half, size=(n_points, 2))
    pts = np.empty((n_points, 3))
    axis = face % 3
    sign = np.where(face < 3, half, -half)
    for i in range(n_points):
        a = axis[i]
        others = [d for d in range(3) if d != a]
        pts[i, a] = sign[i]
        pts[i, others[0]] = uv[i, 0]
        pts[i, others[1]] = uv[i, 1]
    return PointCloud(np.asarray(center) + pts, label=label)


def classification_dataset(n_per_class, n_points, seed):
    """8+8-style toy set: label 0 = sphere, label 1 = cube."""
    rng = np.random.default_rng(seed)
    clouds = []
    for _ in range(n_per_class):
        clouds.append(sphere_cloud(n_points, rng, label=0))
    for _ in range(n_per_class):
        clouds.append(cube_cloud(n_points, rng, label=1))
    return clouds


def segmentation_cloud(n_points, rng):
    """Composite cloud: sphere half (part 0) next to a cube half (part 1)."""
    n_sphere = n_points // 2
    n_cube = n_points - n_sphere
    sphere = sphere_cloud(n_sphere, rng, center=(-1.5, 0.0, 0.0)).positions
    cube = cube_cloud(n_cube, rng, center=(1.5, 0.0, 0.0)).positions
    positions = np.concatenate([sphere, cube])
    labels = np.concatenate([np.zeros(n_sphere, np.intp), np.ones(n_cube, np.intp)])
    order = rng.permutation(n_points)
    return PointCloud(positions[order]), labels[order]


def segmentation_dataset(n_clouds, n_points, seed):
    rng = np.random.default_rng(seed)
    return [segmentation_cloud(n_points, rng) for _ in range(n_clouds)]


def uniform_cloud(n_points, seed):
    """Uniform points in the unit cube; handy for locality experiments."""
    rng = np.random.default_rng(seed)
    return PointCloud(rng.random((n_points, 3)))
