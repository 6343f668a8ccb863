"""Surface distance metrics between label volumes.

Surfaces are the sets of boundary voxel centres: foreground voxels with at
least one background face-neighbour, the grid border counting as background.
Directed distances from one surface to the other come from the exact distance
transform of the other surface, and both directions are pooled for HD95 and
ASSD, which makes both metrics symmetric.
"""

from __future__ import annotations

import dataclasses
import math
from typing import Optional, Tuple

import numpy as np
from scipy import ndimage

from cine_selftrain.grid import (
    LabelVolume,
    Spacing,
    StructureId,
    check_same_grid,
    foreground_mask,
)
from cine_selftrain.metrics.distance import euclidean_distance_transform

_FACE_NEIGHBOURS = ndimage.generate_binary_structure(3, 1)


def boundary_mask(mask: np.ndarray) -> np.ndarray:
    """Foreground voxels with a background or out-of-grid face-neighbour."""
    mask = np.asarray(mask, dtype=bool)
    interior = ndimage.binary_erosion(
        mask, structure=_FACE_NEIGHBOURS, border_value=0
    )
    return mask & ~interior


def extract_surface(mask: np.ndarray) -> np.ndarray:
    """Boundary voxel coordinates of `mask`.

    :param mask: Boolean array shaped ``(nz, ny, nx)``.
    :return: ``(n, 3)`` integer array of ``(x, y, z)`` coordinates in
        increasing linear-index order.
    """
    return np.argwhere(boundary_mask(mask))[:, ::-1]


@dataclasses.dataclass(frozen=True, eq=False)
class SurfaceDistanceSet:
    """Directed surface distances in mm between two masks.

    An undefined set (``defined`` is ``False``) stands for a comparison in
    which at least one of the surfaces is empty.
    """

    distances_a_to_b: np.ndarray
    distances_b_to_a: np.ndarray
    defined: bool = True

    @classmethod
    def undefined(cls) -> SurfaceDistanceSet:
        empty = np.zeros(0, dtype=np.float64)
        return cls(empty, empty, defined=False)

    @property
    def pooled(self) -> np.ndarray:
        """Both directed lists concatenated and sorted ascending."""
        return np.sort(
            np.concatenate([self.distances_a_to_b, self.distances_b_to_a])
        )


def _bounding_box(mask: np.ndarray) -> Tuple[slice, ...]:
    idx = np.nonzero(mask)
    return tuple(slice(int(i.min()), int(i.max()) + 1) for i in idx)


def mask_surface_distances(
    a: np.ndarray, b: np.ndarray, spacing: Spacing
) -> SurfaceDistanceSet:
    """Surface distances between two boolean masks on the same grid."""
    surface_a = boundary_mask(a)
    surface_b = boundary_mask(b)
    if not surface_a.any() or not surface_b.any():
        return SurfaceDistanceSet.undefined()

    # The nearest-point distance only depends on the two point sets, so the
    # transform can run on their joint bounding box.
    box = _bounding_box(surface_a | surface_b)
    surface_a, surface_b = surface_a[box], surface_b[box]
    a_to_b = euclidean_distance_transform(surface_b, spacing)[surface_a]
    b_to_a = euclidean_distance_transform(surface_a, spacing)[surface_b]
    return SurfaceDistanceSet(a_to_b, b_to_a)


def surface_distances(
    a: LabelVolume, b: LabelVolume, s: StructureId
) -> SurfaceDistanceSet:
    """Directed surface distances of structure `s` between `a` and `b`.

    :raises GridMismatch: If the volumes differ in shape or spacing.
    """
    check_same_grid(a, b)
    return mask_surface_distances(
        foreground_mask(a, s), foreground_mask(b, s), a.spacing
    )


def hd95(sd: SurfaceDistanceSet) -> Optional[float]:
    """95th percentile of the pooled surface distances (nearest rank).

    The result is the ``ceil(0.95 n)``-th smallest of the ``n`` pooled
    distances. ``None`` if `sd` is undefined.
    """
    if not sd.defined:
        return None
    pooled = sd.pooled
    rank = (95 * pooled.size + 99) // 100
    return float(pooled[rank - 1])


def assd(sd: SurfaceDistanceSet) -> Optional[float]:
    """Mean of the pooled surface distances; ``None`` if `sd` is undefined."""
    if not sd.defined:
        return None
    pooled = sd.pooled
    return math.fsum(pooled) / pooled.size
