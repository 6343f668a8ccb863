"""Brute-force reference implementations the fast kernels are checked on."""

import math
from typing import List, Optional, Tuple

import numpy as np

from cine_selftrain.grid import Spacing


def _points_mm(mask: np.ndarray, spacing: Spacing) -> np.ndarray:
    return np.argwhere(mask) * np.asarray(spacing.zyx, dtype=np.float64)


def nearest_distances(
    sources: np.ndarray, targets: np.ndarray
) -> np.ndarray:
    """Distance from every source point to its nearest target point."""
    diff = sources[:, None, :] - targets[None, :, :]
    return np.sqrt((diff**2).sum(axis=2)).min(axis=1)


def brute_force_edt(mask: np.ndarray, spacing: Spacing) -> np.ndarray:
    """Scan every foreground voxel for every voxel of the grid."""
    if not mask.any():
        return np.full(mask.shape, np.inf)
    every = _points_mm(np.ones(mask.shape, dtype=bool), spacing)
    return nearest_distances(every, _points_mm(mask, spacing)).reshape(
        mask.shape
    )


def brute_force_boundary(mask: np.ndarray) -> np.ndarray:
    """Foreground voxels with a face-neighbour that is background or outside."""
    padded = np.pad(mask, 1, constant_values=False)
    core = tuple(slice(1, -1) for _ in range(3))
    exposed = np.zeros(mask.shape, dtype=bool)
    for axis in range(3):
        for step in (-1, 1):
            shifted = np.roll(padded, step, axis=axis)[core]
            exposed |= ~shifted
    return mask & exposed


def brute_force_surface_distances(
    a: np.ndarray, b: np.ndarray, spacing: Spacing
) -> Optional[Tuple[np.ndarray, np.ndarray]]:
    """All-pairs directed surface distances, ``None`` if a surface is empty."""
    surface_a = _points_mm(brute_force_boundary(a), spacing)
    surface_b = _points_mm(brute_force_boundary(b), spacing)
    if len(surface_a) == 0 or len(surface_b) == 0:
        return None
    return (
        nearest_distances(surface_a, surface_b),
        nearest_distances(surface_b, surface_a),
    )


def brute_force_dice(a: np.ndarray, b: np.ndarray) -> Optional[float]:
    a_set = {tuple(p) for p in np.argwhere(a)}
    b_set = {tuple(p) for p in np.argwhere(b)}
    if not a_set and not b_set:
        return None
    return 2 * len(a_set & b_set) / (len(a_set) + len(b_set))


def nearest_rank(values: List[float], percent: int) -> float:
    ordered = sorted(values)
    rank = -(-percent * len(ordered) // 100)
    return ordered[rank - 1]


def mean(values: List[float]) -> float:
    return math.fsum(values) / len(values)
