"""Voxel grid domain types shared by every other module.

Volumes are stored as numpy arrays indexed ``[z, y, x]`` in C order, so the
flat (row-major) index of voxel ``(x, y, z)`` is ``z * ny * nx + y * nx + x``
and x varies fastest. All types are immutable after construction: the arrays
they hold are read-only copies.
"""

from __future__ import annotations

import dataclasses
import math
from enum import IntEnum
from typing import Sequence, Tuple, Union

import numpy as np

from cine_selftrain.errors import GridMismatch, InvalidVolume, LabelRangeError


@dataclasses.dataclass(frozen=True)
class Spacing:
    """Voxel edge lengths in mm."""

    dx: float = 1.0
    dy: float = 1.0
    dz: float = 1.0

    def __post_init__(self) -> None:
        for name in ('dx', 'dy', 'dz'):
            value = getattr(self, name)
            if not math.isfinite(value) or value <= 0:
                raise InvalidVolume(
                    f"Spacing {name} must be positive and finite, got {value}"
                )

    @property
    def zyx(self) -> Tuple[float, float, float]:
        """The spacing in array axis order."""
        return self.dz, self.dy, self.dx

    @property
    def voxel_volume(self) -> float:
        return self.dx * self.dy * self.dz


@dataclasses.dataclass(frozen=True)
class GridShape:
    """Voxel counts per axis."""

    nx: int
    ny: int
    nz: int

    def __post_init__(self) -> None:
        for name in ('nx', 'ny', 'nz'):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise InvalidVolume(
                    f"Grid size {name} must be a positive integer, got {value}"
                )
        if self.size > np.iinfo(np.intp).max:
            raise InvalidVolume(f"Grid {self} is too large to address")

    @property
    def size(self) -> int:
        return self.nx * self.ny * self.nz

    @property
    def zyx(self) -> Tuple[int, int, int]:
        """The shape of the numpy arrays holding volumes on this grid."""
        return self.nz, self.ny, self.nx

    @classmethod
    def from_array_shape(cls, shape: Sequence[int]) -> GridShape:
        nz, ny, nx = shape
        return cls(nx=int(nx), ny=int(ny), nz=int(nz))


class StructureId(IntEnum):
    """Canonical structure codes; 0 is background."""

    BACKGROUND = 0
    LV_MYO = 1
    LV = 2
    RV = 3
    LA = 4
    RA = 5
    AORTA = 6
    PULMONARY_ARTERY = 7

    @property
    def label(self) -> str:
        return _STRUCTURE_LABELS[self]

    @classmethod
    def from_label(cls, label: str) -> StructureId:
        for structure, name in _STRUCTURE_LABELS.items():
            if name == label:
                return structure
        raise ValueError(f"Unknown structure name '{label}'")


_STRUCTURE_LABELS = {
    StructureId.BACKGROUND: 'background',
    StructureId.LV_MYO: 'LV_myo',
    StructureId.LV: 'LV',
    StructureId.RV: 'RV',
    StructureId.LA: 'LA',
    StructureId.RA: 'RA',
    StructureId.AORTA: 'aorta',
    StructureId.PULMONARY_ARTERY: 'pulmonary_artery',
}

NUM_CLASSES = len(StructureId)

#: The seven foreground structures, in code order.
STRUCTURES: Tuple[StructureId, ...] = tuple(StructureId)[1:]

#: Thin vessels that legitimately split into several components.
VESSELS = frozenset({StructureId.AORTA, StructureId.PULMONARY_ARTERY})

#: Label precedence when shapes overlap, highest first.
PRECEDENCE: Tuple[StructureId, ...] = (
    StructureId.LV_MYO,
    StructureId.LV,
    StructureId.RV,
    StructureId.LA,
    StructureId.RA,
    StructureId.AORTA,
    StructureId.PULMONARY_ARTERY,
)


def _frozen_array(
    data: Union[np.ndarray, Sequence], shape: GridShape, dtype: np.dtype
) -> np.ndarray:
    array = np.array(data, dtype=dtype, copy=True)
    if array.size != shape.size:
        raise InvalidVolume(
            f"Expected {shape.size} voxels for grid {shape}, got {array.size}"
        )
    array = array.reshape(shape.zyx)
    array.flags.writeable = False
    return array


@dataclasses.dataclass(frozen=True, eq=False)
class ScalarVolume:
    """One 3D intensity frame.

    :param shape: The grid shape.
    :param spacing: The voxel spacing in mm.
    :param values: The intensities, either flat in row-major order or already
        shaped ``(nz, ny, nx)``. Stored as ``float32``.
    """

    shape: GridShape
    spacing: Spacing
    values: np.ndarray

    def __post_init__(self) -> None:
        values = _frozen_array(self.values, self.shape, np.float32)
        if not np.all(np.isfinite(values)):
            raise InvalidVolume("Intensities must be finite")
        object.__setattr__(self, 'values', values)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ScalarVolume):
            return NotImplemented
        return (
            self.shape == other.shape
            and self.spacing == other.spacing
            and np.array_equal(self.values, other.values)
        )

    __hash__ = None


@dataclasses.dataclass(frozen=True, eq=False)
class LabelVolume:
    """One 3D label map over the canonical structure set.

    :param shape: The grid shape.
    :param spacing: The voxel spacing in mm.
    :param labels: Structure codes, flat or shaped ``(nz, ny, nx)``. Stored
        as ``uint8``.
    :raises LabelRangeError: For codes outside 0..7 or codes that are not
        whole numbers.
    """

    shape: GridShape
    spacing: Spacing
    labels: np.ndarray

    def __post_init__(self) -> None:
        raw = np.asarray(self.labels)
        if raw.size and raw.dtype.kind == 'f':
            fractional = ~np.isfinite(raw) | (raw != np.rint(raw))
            if fractional.any():
                raise LabelRangeError(float(raw[fractional].flat[0]))
        if raw.size and (raw.min() < 0 or raw.max() >= NUM_CLASSES):
            bad = raw.max() if raw.max() >= NUM_CLASSES else raw.min()
            raise LabelRangeError(int(bad))
        object.__setattr__(
            self, 'labels', _frozen_array(raw, self.shape, np.uint8)
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, LabelVolume):
            return NotImplemented
        return (
            self.shape == other.shape
            and self.spacing == other.spacing
            and np.array_equal(self.labels, other.labels)
        )

    __hash__ = None

    @classmethod
    def empty(cls, shape: GridShape, spacing: Spacing) -> LabelVolume:
        return cls(shape, spacing, np.zeros(shape.zyx, dtype=np.uint8))

    def replace(self, labels: np.ndarray) -> LabelVolume:
        """Return a new volume on the same grid holding `labels`."""
        return LabelVolume(self.shape, self.spacing, labels)


Frame = Tuple[ScalarVolume, LabelVolume]


@dataclasses.dataclass(frozen=True)
class CineStudy:
    """A subject's 4D sequence of paired intensity and label frames."""

    subject_id: str
    frames: Tuple[Frame, ...]
    is_manual: bool = False

    def __post_init__(self) -> None:
        frames = tuple((image, labels) for image, labels in self.frames)
        if not frames:
            raise InvalidVolume(
                f"Study '{self.subject_id}' must have at least one frame"
            )
        shape, spacing = frames[0][0].shape, frames[0][0].spacing
        for image, labels in frames:
            for volume in (image, labels):
                if volume.shape != shape or volume.spacing != spacing:
                    raise GridMismatch(
                        (shape, spacing),
                        (volume.shape, volume.spacing),
                        f"Study '{self.subject_id}': frames must share one "
                        f"grid, {{}} vs {{}}",
                    )
        object.__setattr__(self, 'frames', frames)

    @property
    def num_frames(self) -> int:
        return len(self.frames)

    @property
    def shape(self) -> GridShape:
        return self.frames[0][0].shape

    @property
    def spacing(self) -> Spacing:
        return self.frames[0][0].spacing

    @property
    def images(self) -> Tuple[ScalarVolume, ...]:
        return tuple(image for image, _ in self.frames)

    @property
    def labels(self) -> Tuple[LabelVolume, ...]:
        return tuple(labels for _, labels in self.frames)

    def with_labels(self, labels: Sequence[LabelVolume]) -> CineStudy:
        """Return a copy of this study with every frame's label replaced."""
        if len(labels) != self.num_frames:
            raise InvalidVolume(
                f"Study '{self.subject_id}' has {self.num_frames} frames, "
                f"got {len(labels)} label volumes"
            )
        return dataclasses.replace(
            self, frames=tuple(zip(self.images, labels))
        )


def check_same_grid(a: LabelVolume, b: LabelVolume) -> None:
    """Raise :class:`GridMismatch` unless `a` and `b` share a grid."""
    if a.shape != b.shape or a.spacing != b.spacing:
        raise GridMismatch((a.shape, a.spacing), (b.shape, b.spacing))


def foreground_mask(vol: LabelVolume, s: StructureId) -> np.ndarray:
    """Boolean mask of the voxels labelled `s`, shaped ``(nz, ny, nx)``."""
    return vol.labels == int(s)


def linear_index(shape: GridShape, x: int, y: int, z: int) -> int:
    """Row-major flat index of voxel ``(x, y, z)``.

    :raises IndexError: If the coordinates fall outside the grid.
    """
    if not (0 <= x < shape.nx and 0 <= y < shape.ny and 0 <= z < shape.nz):
        raise IndexError(f"Voxel ({x}, {y}, {z}) is outside grid {shape}")
    return z * (shape.ny * shape.nx) + y * shape.nx + x


def delinearize(shape: GridShape, index: int) -> Tuple[int, int, int]:
    """Inverse of :func:`linear_index`, returning ``(x, y, z)``."""
    if not 0 <= index < shape.size:
        raise IndexError(f"Index {index} is outside grid {shape}")
    z, rest = divmod(index, shape.ny * shape.nx)
    y, x = divmod(rest, shape.nx)
    return x, y, z


