"""Plausibility flagging of segmentations without ground truth.

Each predicted structure is summarised by its volume, surface area and number
of connected components. A structure is flagged in a frame if its volume
deviates from the cohort mean by more than two standard deviations, or if it
splits into more than one connected component. The aorta and the pulmonary
artery are exempt from the component rule: thin vessels easily fall apart
into several pieces and are simple to fix afterwards.

The cohort is every frame of every study in the current dataset, and its
statistics are recomputed each time the labels change.
"""

from __future__ import annotations

import dataclasses
import warnings
from enum import Enum
from typing import Dict, FrozenSet, List, Mapping, Optional, Sequence

from cine_selftrain.errors import InsufficientData
from cine_selftrain.grid import (
    STRUCTURES,
    VESSELS,
    CineStudy,
    LabelVolume,
    StructureId,
)
from cine_selftrain.metrics import (
    connected_components,
    keep_largest_components,
    structure_surface_area_mm2,
    structure_volume_mm3,
)
from cine_selftrain.utils.multi_processing import ordered_map
from cine_selftrain.utils.statistics import MeanStd, population_mean_std

#: Number of standard deviations a volume may deviate before it is flagged.
VOLUME_SIGMAS = 2.0


@dataclasses.dataclass(frozen=True)
class StructureStats:
    structure: StructureId
    volume_mm3: float
    surface_mm2: float
    component_count: int


@dataclasses.dataclass(frozen=True)
class CohortVolumeStats:
    """Per-structure volume mean and population std over a cohort."""

    volumes: Mapping[StructureId, MeanStd]
    frame_count: int


class FlagReason(str, Enum):
    VOLUME_OUTLIER = 'volume_outlier'
    MULTI_COMPONENT = 'multi_component'


@dataclasses.dataclass(frozen=True)
class FlagResult:
    structure: StructureId
    reasons: FrozenSet[FlagReason] = frozenset()

    @property
    def flagged(self) -> bool:
        return bool(self.reasons)


@dataclasses.dataclass(frozen=True)
class FrameFlags:
    """The flag results of one frame of one study."""

    subject_id: str
    frame_index: int
    results: Sequence[FlagResult]


def collect_stats(vol: LabelVolume) -> List[StructureStats]:
    """Volume, surface area and component count of every structure.

    Structures absent from `vol` are included with zero statistics.
    """
    return [
        StructureStats(
            structure=s,
            volume_mm3=structure_volume_mm3(vol, s),
            surface_mm2=structure_surface_area_mm2(vol, s),
            component_count=connected_components(vol, s).component_count,
        )
        for s in STRUCTURES
    ]


def cohort_volume_stats(
    frame_stats: Sequence[Sequence[StructureStats]],
) -> CohortVolumeStats:
    """Volume mean and population std per structure over all frames.

    :param frame_stats: One :func:`collect_stats` result per frame, for
        every frame of every study in the cohort.
    :raises InsufficientData: If fewer than two frames are given.
    """
    if len(frame_stats) < 2:
        raise InsufficientData(
            f"Cohort statistics need at least 2 frames, got {len(frame_stats)}"
        )
    per_structure: Dict[StructureId, List[float]] = {s: [] for s in STRUCTURES}
    for stats in frame_stats:
        for entry in stats:
            per_structure[entry.structure].append(entry.volume_mm3)
    return CohortVolumeStats(
        volumes={
            s: population_mean_std(v, minimum=2, what='frames')
            for s, v in per_structure.items()
        },
        frame_count=len(frame_stats),
    )


def flag_frame(
    stats: Sequence[StructureStats], cohort: CohortVolumeStats
) -> List[FlagResult]:
    """Apply the plausibility rules to one frame.

    A volume is an outlier iff ``|v - mean| > 2 std``; with a zero std any
    volume different from the mean is an outlier. Vessels never get the
    multi-component flag.
    """
    results = []
    for entry in stats:
        reasons = set()
        moments = cohort.volumes[entry.structure]
        if abs(entry.volume_mm3 - moments.mean) > VOLUME_SIGMAS * moments.std:
            reasons.add(FlagReason.VOLUME_OUTLIER)
        if entry.component_count > 1 and entry.structure not in VESSELS:
            reasons.add(FlagReason.MULTI_COMPONENT)
        results.append(FlagResult(entry.structure, frozenset(reasons)))
    return results


def flagged_fraction(
    frame_results: Sequence[Sequence[FlagResult]],
) -> Dict[StructureId, float]:
    """Fraction of frames in which each structure is flagged.

    :raises InsufficientData: If no frames are given.
    """
    if not frame_results:
        raise InsufficientData("Flagged fractions need at least one frame")
    counts = {s: 0 for s in STRUCTURES}
    for results in frame_results:
        for result in results:
            if result.flagged:
                counts[result.structure] += 1
    return {s: counts[s] / len(frame_results) for s in STRUCTURES}


def _volume_of(stats: Sequence[StructureStats], s: StructureId) -> float:
    return next(e.volume_mm3 for e in stats if e.structure == s)


def flag_studies(
    studies: Sequence[CineStudy],
    largest_component: bool = False,
    threads: Optional[int] = 1,
) -> List[FrameFlags]:
    """Flag every frame of every study against the whole-dataset cohort.

    :param studies: The studies whose current labels are checked.
    :param largest_component: Whether to keep only the largest component of
        every non-vessel structure before computing the statistics.
    :param threads: Worker count for the per-frame statistics.
    :return: One :class:`FrameFlags` per frame, in study then frame order.
        Empty when the cohort has fewer than two frames.
    :warns UserWarning: Naming the structures absent from every frame.
    """
    keys = [
        (study.subject_id, t, labels)
        for study in studies
        for t, labels in enumerate(study.labels)
    ]
    if len(keys) < 2:
        warnings.warn(
            f"Skipping plausibility flags: the cohort has {len(keys)} "
            f"frame(s), at least 2 are needed"
        )
        return []

    non_vessels = [s for s in STRUCTURES if s not in VESSELS]

    def _stats(key) -> List[StructureStats]:
        labels = key[2]
        if largest_component:
            labels = keep_largest_components(labels, non_vessels)
        return collect_stats(labels)

    frame_stats = ordered_map(_stats, keys, threads)
    absent = [
        s.label
        for s in STRUCTURES
        if all(_volume_of(stats, s) == 0 for stats in frame_stats)
    ]
    if absent:
        warnings.warn(
            f"No frame of the cohort contains {', '.join(absent)}; their "
            f"volume statistics are all zero"
        )
    cohort = cohort_volume_stats(frame_stats)
    return [
        FrameFlags(subject_id, t, flag_frame(stats, cohort))
        for (subject_id, t, _), stats in zip(keys, frame_stats)
    ]
