"""Segmentation quality against reference labels, per frame and per cohort."""

import dataclasses
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

from cine_selftrain.errors import GridMismatch, InvalidOperation
from cine_selftrain.grid import (
    STRUCTURES,
    CineStudy,
    LabelVolume,
    StructureId,
    check_same_grid,
)
from cine_selftrain.metrics.overlap import dice
from cine_selftrain.metrics.surface import assd, hd95, surface_distances
from cine_selftrain.utils.multi_processing import ordered_map
from cine_selftrain.utils.statistics import MeanStd, mean_std_of_defined


@dataclasses.dataclass(frozen=True)
class FrameMetrics:
    """Dice, HD95 and ASSD of one structure in one frame.

    Values are ``None`` where the metric is undefined.
    """

    subject_id: str
    frame_index: int
    structure: StructureId
    dice: Optional[float]
    hd95: Optional[float]
    assd: Optional[float]


@dataclasses.dataclass(frozen=True)
class MetricSummary:
    """Mean and std of each metric for one structure over a cohort."""

    structure: StructureId
    dice: Optional[MeanStd]
    hd95: Optional[MeanStd]
    assd: Optional[MeanStd]


def evaluate_frame(
    pred: LabelVolume,
    truth: LabelVolume,
    subject_id: str = '',
    frame_index: int = 0,
) -> List[FrameMetrics]:
    """Metrics of every structure of one predicted frame.

    :raises GridMismatch: If the frames are on different grids; the message
        names the frame.
    """
    try:
        check_same_grid(pred, truth)
    except GridMismatch:
        raise GridMismatch(
            (pred.shape, pred.spacing),
            (truth.shape, truth.spacing),
            f"Subject '{subject_id}', frame {frame_index}: prediction grid "
            f"{{}} does not match truth grid {{}}",
        ) from None
    rows = []
    for s in STRUCTURES:
        sd = surface_distances(pred, truth, s)
        rows.append(
            FrameMetrics(
                subject_id=subject_id,
                frame_index=frame_index,
                structure=s,
                dice=dice(pred, truth, s),
                hd95=hd95(sd),
                assd=assd(sd),
            )
        )
    return rows


def _pair_studies(
    preds: Sequence[CineStudy], truths: Mapping[str, CineStudy]
) -> List[Tuple[str, int, LabelVolume, LabelVolume]]:
    jobs = []
    for study in preds:
        if study.subject_id not in truths:
            raise InvalidOperation(
                f"No reference labels for subject '{study.subject_id}'"
            )
        truth = truths[study.subject_id]
        if truth.num_frames != study.num_frames:
            raise InvalidOperation(
                f"Subject '{study.subject_id}' has {study.num_frames} "
                f"predicted frames but {truth.num_frames} reference frames"
            )
        for t, (pred, ref) in enumerate(zip(study.labels, truth.labels)):
            jobs.append((study.subject_id, t, pred, ref))
    return jobs


def evaluate_studies(
    preds: Sequence[CineStudy],
    truths: Mapping[str, CineStudy],
    threads: Optional[int] = 1,
) -> List[FrameMetrics]:
    """Per-frame metrics of every predicted study against its reference.

    :param preds: The studies to evaluate.
    :param truths: Reference studies keyed by subject id.
    :param threads: Worker count; frames are evaluated in parallel.
    :return: Rows in study, frame, structure order.
    """
    jobs = _pair_studies(preds, truths)
    per_frame = ordered_map(
        lambda job: evaluate_frame(job[2], job[3], job[0], job[1]),
        jobs,
        threads,
    )
    return [row for rows in per_frame for row in rows]


def summarize(rows: Sequence[FrameMetrics]) -> Dict[StructureId, MetricSummary]:
    """Cohort mean and std per structure, skipping undefined values."""
    summary = {}
    for s in STRUCTURES:
        entries = [r for r in rows if r.structure == s]
        summary[s] = MetricSummary(
            structure=s,
            dice=mean_std_of_defined([r.dice for r in entries]),
            hd95=mean_std_of_defined([r.hd95 for r in entries]),
            assd=mean_std_of_defined([r.assd for r in entries]),
        )
    return summary
