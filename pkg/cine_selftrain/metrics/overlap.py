import dataclasses
from typing import Optional

import numpy as np

from cine_selftrain.grid import (
    LabelVolume,
    StructureId,
    check_same_grid,
    foreground_mask,
)


@dataclasses.dataclass(frozen=True)
class OverlapCounts:
    """Voxel counts behind a Dice score."""

    intersection: int
    size_a: int
    size_b: int

    def __post_init__(self) -> None:
        if min(self.intersection, self.size_a, self.size_b) < 0:
            raise ValueError("Overlap counts must be non-negative")
        if self.intersection > min(self.size_a, self.size_b):
            raise ValueError("Intersection larger than one of the sets")

    @classmethod
    def from_masks(cls, a: np.ndarray, b: np.ndarray) -> 'OverlapCounts':
        return cls(
            intersection=int(np.count_nonzero(a & b)),
            size_a=int(np.count_nonzero(a)),
            size_b=int(np.count_nonzero(b)),
        )

    @property
    def dice(self) -> Optional[float]:
        """``2 |A n B| / (|A| + |B|)``, or ``None`` when both sets are empty."""
        total = self.size_a + self.size_b
        if total == 0:
            return None
        return 2.0 * self.intersection / total


def overlap_counts(
    a: LabelVolume, b: LabelVolume, s: StructureId
) -> OverlapCounts:
    check_same_grid(a, b)
    return OverlapCounts.from_masks(
        foreground_mask(a, s), foreground_mask(b, s)
    )


def dice(a: LabelVolume, b: LabelVolume, s: StructureId) -> Optional[float]:
    """Dice overlap of structure `s` between two label volumes.

    :raises GridMismatch: If the volumes are not on the same grid.
    :return: The Dice score in ``[0, 1]``, or ``None`` if the structure is
        absent from both volumes. ``None`` must be excluded from averages
        rather than read as 0 or 1.
    """
    return overlap_counts(a, b, s).dice
