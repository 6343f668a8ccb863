"""Temporal consistency of segmentations over the cardiac cycle.

Two measures, both lower for smoother segmentations: the standard deviation
of Dice scores between consecutive frames, and the number of interior
extreme points of a structure's volume curve. Frames are not treated as
cyclic, so the last frame is never compared with the first.
"""

from __future__ import annotations

import dataclasses
import warnings
from typing import Dict, List, Mapping, Optional, Sequence

from cine_selftrain.errors import InsufficientData
from cine_selftrain.grid import STRUCTURES, CineStudy, StructureId
from cine_selftrain.metrics import dice, structure_volume_mm3
from cine_selftrain.utils.statistics import (
    MeanStd,
    mean_std_of_defined,
    population_mean_std,
)


@dataclasses.dataclass(frozen=True)
class VolumeCurve:
    """Volume in mm^3 of one structure in every frame of a study."""

    structure: StructureId
    values: Sequence[float]


@dataclasses.dataclass(frozen=True)
class StructureTemporal:
    structure: StructureId
    curve: VolumeCurve
    dice_std: Optional[float] = None
    extreme_count: Optional[int] = None


@dataclasses.dataclass(frozen=True)
class TemporalReport:
    subject_id: str
    structures: Mapping[StructureId, StructureTemporal]


@dataclasses.dataclass(frozen=True)
class TemporalSummary:
    """Cohort mean and std of both measures for one structure."""

    structure: StructureId
    dice_std: Optional[MeanStd]
    extreme_count: Optional[MeanStd]


def volume_curve(study: CineStudy, s: StructureId) -> VolumeCurve:
    return VolumeCurve(
        structure=s,
        values=tuple(structure_volume_mm3(v, s) for v in study.labels),
    )


def consecutive_dice(study: CineStudy, s: StructureId) -> List[Optional[float]]:
    """Dice of `s` between frames ``t`` and ``t + 1`` for every ``t``."""
    labels = study.labels
    return [dice(labels[t], labels[t + 1], s) for t in range(len(labels) - 1)]


def frame_dice_std(study: CineStudy, s: StructureId) -> float:
    """Population std of the consecutive-frame Dice scores of `s`.

    Pairs where `s` is absent from both frames are skipped.

    :raises InsufficientData: If the study has fewer than 3 frames or fewer
        than 2 pairs have a defined Dice score.
    """
    if study.num_frames < 3:
        raise InsufficientData(
            f"Frame-to-frame Dice std needs at least 3 frames, study "
            f"'{study.subject_id}' has {study.num_frames}"
        )
    scores = [d for d in consecutive_dice(study, s) if d is not None]
    return population_mean_std(
        scores, minimum=2, what=f"defined {s.label} Dice pairs"
    ).std


def _compress_plateaus(values: Sequence[float]) -> List[float]:
    compressed: List[float] = []
    for value in values:
        if not compressed or value != compressed[-1]:
            compressed.append(value)
    return compressed


def count_extremes(curve: VolumeCurve | Sequence[float]) -> int:
    """Number of interior local extrema of a volume curve.

    Runs of equal consecutive values are first collapsed into one point. A
    point then counts if both its neighbours are strictly smaller (a peak) or
    strictly larger (a valley). Endpoints never count.

    :raises InsufficientData: If the curve has fewer than 3 points.
    """
    values = curve.values if isinstance(curve, VolumeCurve) else curve
    if len(values) < 3:
        raise InsufficientData(
            f"Extreme points need a curve of at least 3 frames, got "
            f"{len(values)}"
        )
    points = _compress_plateaus(values)
    count = 0
    for left, mid, right in zip(points, points[1:], points[2:]):
        if (mid > left and mid > right) or (mid < left and mid < right):
            count += 1
    return count


def temporal_report(study: CineStudy) -> TemporalReport:
    """Volume curves, Dice std and extreme counts of every structure.

    Measures that the study is too short for, or structures absent from too
    many frames, are reported as ``None``.

    :warns UserWarning: Naming the structures absent from every frame.
    """
    structures: Dict[StructureId, StructureTemporal] = {}
    for s in STRUCTURES:
        curve = volume_curve(study, s)
        try:
            dice_std: Optional[float] = frame_dice_std(study, s)
        except InsufficientData:
            dice_std = None
        extremes = count_extremes(curve) if study.num_frames >= 3 else None
        structures[s] = StructureTemporal(s, curve, dice_std, extremes)
    absent = [
        s.label
        for s, entry in structures.items()
        if not any(entry.curve.values)
    ]
    if absent:
        warnings.warn(
            f"Study '{study.subject_id}' has no {', '.join(absent)} in any "
            f"frame; their volume curves are flat at zero"
        )
    return TemporalReport(study.subject_id, structures)


def cohort_temporal_summary(
    reports: Sequence[TemporalReport],
) -> Dict[StructureId, TemporalSummary]:
    """Mean and std of both measures across studies, per structure.

    :raises InsufficientData: If no reports are given.
    """
    if not reports:
        raise InsufficientData("The temporal summary needs at least 1 study")
    summary = {}
    for s in STRUCTURES:
        entries = [r.structures[s] for r in reports]
        summary[s] = TemporalSummary(
            structure=s,
            dice_std=mean_std_of_defined([e.dice_std for e in entries]),
            extreme_count=mean_std_of_defined(
                [e.extreme_count for e in entries]
            ),
        )
    return summary
