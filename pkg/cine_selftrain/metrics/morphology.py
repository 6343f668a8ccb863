"""Geometric statistics of single structures.

Volumes, exposed-face surface areas and 26-connected components, the
quantities the plausibility checks in :mod:`cine_selftrain.qc` screen on.
"""

import dataclasses
from typing import Iterable, Tuple

import numpy as np
from scipy import ndimage

from cine_selftrain.grid import (
    LabelVolume,
    Spacing,
    StructureId,
    foreground_mask,
)

_FULL_NEIGHBOURHOOD = np.ones((3, 3, 3), dtype=bool)


@dataclasses.dataclass(frozen=True)
class ComponentReport:
    """The connected components of one structure."""

    component_count: int
    component_sizes: Tuple[int, ...]


def structure_volume_mm3(vol: LabelVolume, s: StructureId) -> float:
    return (
        int(np.count_nonzero(foreground_mask(vol, s)))
        * vol.spacing.voxel_volume
    )


def mask_surface_area_mm2(mask: np.ndarray, spacing: Spacing) -> float:
    """Total area of voxel faces between `mask` and background or outside."""
    padded = np.pad(np.asarray(mask, dtype=np.int8), 1)
    # Array axes are (z, y, x); a face normal to z has area dx * dy, etc.
    face_areas = (
        spacing.dx * spacing.dy,
        spacing.dx * spacing.dz,
        spacing.dy * spacing.dz,
    )
    area = 0.0
    for axis, face_area in enumerate(face_areas):
        faces = np.count_nonzero(np.diff(padded, axis=axis))
        area += faces * face_area
    return area


def structure_surface_area_mm2(vol: LabelVolume, s: StructureId) -> float:
    return mask_surface_area_mm2(foreground_mask(vol, s), vol.spacing)


def label_components(mask: np.ndarray) -> Tuple[np.ndarray, int]:
    """26-connected component labelling of a boolean mask."""
    return ndimage.label(mask, structure=_FULL_NEIGHBOURHOOD)


def mask_components(mask: np.ndarray) -> ComponentReport:
    labelled, count = label_components(mask)
    if count == 0:
        return ComponentReport(0, ())
    sizes = np.bincount(labelled.ravel(), minlength=count + 1)[1:]
    return ComponentReport(
        component_count=int(count),
        component_sizes=tuple(int(s) for s in sorted(sizes, reverse=True)),
    )


def connected_components(vol: LabelVolume, s: StructureId) -> ComponentReport:
    """Components of structure `s` under 26-connectivity, largest first."""
    return mask_components(foreground_mask(vol, s))


def largest_component_mask(mask: np.ndarray) -> np.ndarray:
    """The largest 26-connected component of `mask`.

    Ties go to the component whose first voxel has the smallest linear index.
    """
    labelled, count = label_components(mask)
    if count <= 1:
        return np.asarray(mask, dtype=bool)
    flat = labelled.ravel()
    indices = np.flatnonzero(flat)
    components, first = np.unique(flat[indices], return_index=True)
    first_index = indices[first]
    sizes = np.bincount(flat, minlength=count + 1)[components]
    # lexsort sorts by the last key first: size descending, then position
    keep = components[np.lexsort((first_index, -sizes))[0]]
    return labelled == keep


def keep_largest_component(vol: LabelVolume, s: StructureId) -> LabelVolume:
    """Relabel voxels of `s` outside its largest component as background."""
    mask = foreground_mask(vol, s)
    largest = largest_component_mask(mask)
    if np.array_equal(mask, largest):
        return vol
    labels = vol.labels.copy()
    labels[mask & ~largest] = int(StructureId.BACKGROUND)
    return vol.replace(labels)


def keep_largest_components(
    vol: LabelVolume, structures: Iterable[StructureId]
) -> LabelVolume:
    for s in structures:
        vol = keep_largest_component(vol, s)
    return vol
