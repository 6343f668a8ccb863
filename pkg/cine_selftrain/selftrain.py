"""Iterative pseudo-label self-training.

A foundation segmenter labels every frame of every study. Each round then
trains a fresh student on all frames with their current labels and replaces
the labels by the student's predictions. Manually labelled studies can be
mixed into the training set; their labels are never replaced.

Iteration 1 of the reports describes the foundation labels, iteration
``k + 1`` the labels after round ``k``.
"""

import dataclasses
import logging
from enum import Enum
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

from cine_selftrain.errors import (
    CineSelftrainError,
    FramePredictionError,
    InvalidConfigValue,
    InvalidOperation,
    RoundFailed,
)
from cine_selftrain.foundation import FrameContext, SegmenterModel
from cine_selftrain.grid import (
    CineStudy,
    Frame,
    LabelVolume,
    StructureId,
)
from cine_selftrain.metrics.evaluation import (
    MetricSummary,
    evaluate_studies,
    summarize,
)
from cine_selftrain.qc import FrameFlags, flag_studies, flagged_fraction
from cine_selftrain.student.model import (
    StudentModel,
    TrainConfig,
    predict,
    train,
)
from cine_selftrain.temporal import (
    TemporalReport,
    TemporalSummary,
    cohort_temporal_summary,
    temporal_report,
)
from cine_selftrain.utils.hashing import hash_arrays
from cine_selftrain.utils.multi_processing import ordered_map
from cine_selftrain.utils.seeding import substream

logger = logging.getLogger(__name__)


class SelfTrainMode(str, Enum):
    PSEUDO_ONLY = 'pseudo_only'
    PSEUDO_MIXED = 'pseudo_mixed'


@dataclasses.dataclass(frozen=True)
class SelfTrainConfig:
    """Settings of a self-training run.

    :param rounds: Number of train-and-relabel rounds.
    :param train_cfg: Student training settings, shared by every round.
    :param mode: Whether manual studies join the training set.
    :param manual_fraction: Target share of manual frames in the training
        set in mixed mode.
    :param seed: Root of the manual-frame selection stream.
    """

    rounds: int = 5
    train_cfg: TrainConfig = TrainConfig()
    mode: SelfTrainMode = SelfTrainMode.PSEUDO_ONLY
    manual_fraction: float = 0.05
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, 'mode', SelfTrainMode(self.mode))
        if self.rounds < 0:
            raise InvalidConfigValue('selftrain.rounds', "must be non-negative")
        if self.mode is SelfTrainMode.PSEUDO_MIXED and not (
            0.0 < self.manual_fraction < 1.0
        ):
            raise InvalidConfigValue(
                'selftrain.manual_fraction',
                "must be in (0, 1) in pseudo_mixed mode",
            )
        if self.seed < 0:
            raise InvalidConfigValue('selftrain.seed', "must be non-negative")


@dataclasses.dataclass(frozen=True)
class IterationReport:
    """Quality of the pseudo-labels after one iteration.

    Flags, temporal measures and ground-truth metrics cover the studies
    whose labels are updated, i.e. every non-manual study.
    """

    iteration: int
    frame_flags: Sequence[FrameFlags]
    flagged_fractions: Mapping[StructureId, float]
    temporal: Sequence[TemporalReport]
    temporal_summary: Mapping[StructureId, TemporalSummary]
    truth_metrics: Optional[Mapping[StructureId, MetricSummary]]
    label_hash: str
    final_loss: Optional[float] = None


@dataclasses.dataclass(frozen=True)
class SelfTrainResult:
    model: Optional[StudentModel]
    studies: List[CineStudy]
    reports: List[IterationReport]


def label_set_hash(studies: Sequence[CineStudy]) -> str:
    """Content hash of the labels of every frame of every study."""
    return hash_arrays(
        labels.labels for study in studies for labels in study.labels
    )


def _relabel(
    studies: Sequence[CineStudy],
    segment: Callable[[CineStudy, int], LabelVolume],
    threads: Optional[int],
) -> List[CineStudy]:
    """Replace the labels of every non-manual frame, all or nothing."""
    jobs = [
        (i, t)
        for i, study in enumerate(studies)
        if not study.is_manual
        for t in range(study.num_frames)
    ]

    def _segment(job: Tuple[int, int]) -> LabelVolume:
        study = studies[job[0]]
        try:
            return segment(study, job[1])
        except CineSelftrainError:
            raise
        except Exception as e:
            raise FramePredictionError(study.subject_id, job[1], repr(e)) from e

    predictions = iter(ordered_map(_segment, jobs, threads))
    updated = []
    for study in studies:
        if study.is_manual:
            updated.append(study)
        else:
            labels = [next(predictions) for _ in range(study.num_frames)]
            updated.append(study.with_labels(labels))
    return updated


def initialize_pseudo_labels(
    studies: Sequence[CineStudy],
    foundation: SegmenterModel,
    threads: Optional[int] = 1,
) -> List[CineStudy]:
    """Label every frame of every non-manual study with `foundation`.

    :raises FramePredictionError: If the segmenter fails on a frame; the
        error names the subject and the frame.
    """
    return _relabel(
        studies,
        lambda study, t: foundation.predict(
            study.images[t], FrameContext(study.subject_id, t)
        ),
        threads,
    )


def apply_model(
    model: StudentModel,
    studies: Sequence[CineStudy],
    train_cfg: Optional[TrainConfig] = None,
    threads: Optional[int] = 1,
) -> List[CineStudy]:
    """Replace the labels of every non-manual frame by `model`'s prediction."""
    return _relabel(
        studies,
        lambda study, t: predict(model, study.images[t], train_cfg),
        threads,
    )


def select_manual_frames(
    studies: Sequence[CineStudy], cfg: SelfTrainConfig
) -> List[Frame]:
    """The manual frames mixed into every round's training set.

    Enough manual frames are drawn to make up ``cfg.manual_fraction`` of the
    training set, at least one and at most all of them. The draw depends
    only on ``cfg.seed``, so the same frames are used in every round.

    :raises InvalidOperation: If no manual study is available.
    """
    manual = [frame for s in studies if s.is_manual for frame in s.frames]
    if not manual:
        raise InvalidOperation(
            "Mode pseudo_mixed requires at least one study with "
            "is_manual = true"
        )
    pseudo = sum(s.num_frames for s in studies if not s.is_manual)
    wanted = round(cfg.manual_fraction * pseudo / (1.0 - cfg.manual_fraction))
    count = min(len(manual), max(1, wanted))
    rng = substream(cfg.seed, 'manual')
    chosen = sorted(rng.choice(len(manual), size=count, replace=False))
    return [manual[i] for i in chosen]


def training_pairs(
    studies: Sequence[CineStudy], cfg: SelfTrainConfig
) -> List[Frame]:
    """Every pseudo-labelled frame, followed by the manual mix-in if any."""
    pairs = [frame for s in studies if not s.is_manual for frame in s.frames]
    if cfg.mode is SelfTrainMode.PSEUDO_MIXED:
        pairs.extend(select_manual_frames(studies, cfg))
    return pairs


def run_round(
    studies: Sequence[CineStudy],
    cfg: SelfTrainConfig,
    threads: Optional[int] = 1,
) -> Tuple[StudentModel, List[CineStudy]]:
    """Train a fresh student on the current labels and relabel with it.

    :return: The new model and the studies with every non-manual frame
        relabelled. Manual studies are returned unchanged.
    :raises TrainingError: If the student cannot be trained.
    :raises FramePredictionError: If prediction fails on a frame. No label
        is replaced in that case.
    """
    pairs = training_pairs(studies, cfg)
    logger.info("Training a student on %d frames", len(pairs))
    model = train(pairs, cfg.train_cfg, threads)
    return model, apply_model(model, studies, cfg.train_cfg, threads)


def iteration_report(
    iteration: int,
    studies: Sequence[CineStudy],
    truth: Optional[Mapping[str, CineStudy]] = None,
    final_loss: Optional[float] = None,
    threads: Optional[int] = 1,
) -> IterationReport:
    """Flags, temporal consistency and (with `truth`) accuracy of the labels."""
    updated = [s for s in studies if not s.is_manual]
    flags = flag_studies(updated, threads=threads)
    fractions: Dict[StructureId, float] = (
        flagged_fraction([f.results for f in flags]) if flags else {}
    )
    temporal = ordered_map(temporal_report, updated, threads)
    summary = cohort_temporal_summary(temporal) if temporal else {}
    metrics = None
    if truth is not None:
        metrics = summarize(evaluate_studies(updated, truth, threads))
    return IterationReport(
        iteration=iteration,
        frame_flags=flags,
        flagged_fractions=fractions,
        temporal=temporal,
        temporal_summary=summary,
        truth_metrics=metrics,
        label_hash=label_set_hash(studies),
        final_loss=final_loss,
    )


def _log_report(report: IterationReport) -> None:
    fractions = ', '.join(
        f'{s.label}={f:.3f}' for s, f in report.flagged_fractions.items()
    )
    logger.info(
        "Iteration %d flagged fractions: %s",
        report.iteration,
        fractions or 'n/a',
    )


def run_self_training(
    studies: Sequence[CineStudy],
    foundation: SegmenterModel,
    cfg: SelfTrainConfig = SelfTrainConfig(),
    truth: Optional[Mapping[str, CineStudy]] = None,
    threads: Optional[int] = 1,
    on_report: Optional[Callable[[IterationReport], None]] = None,
) -> SelfTrainResult:
    """Initialise pseudo-labels with `foundation` and self-train.

    :param studies: The dataset. Labels of non-manual studies are ignored
        and replaced; manual studies keep theirs.
    :param foundation: The initial segmenter, e.g. a
        :class:`~cine_selftrain.foundation.FoundationSimulator` or a
        :class:`~cine_selftrain.student.StudentSegmenter`.
    :param cfg: The run settings.
    :param truth: Reference labels keyed by subject id; only used for the
        accuracy part of the reports.
    :param threads: Worker count.
    :param on_report: Called with every report as soon as it is ready.
    :return: The last model (``None`` after zero rounds), the final studies
        and ``cfg.rounds + 1`` reports.
    :raises InvalidOperation: In mixed mode without manual studies.
    :raises RoundFailed: If initialisation or a round fails. The exception
        carries the reports produced before the failure.
    """
    if cfg.mode is SelfTrainMode.PSEUDO_MIXED:
        select_manual_frames(studies, cfg)
    reports: List[IterationReport] = []

    def _emit(report: IterationReport) -> None:
        reports.append(report)
        _log_report(report)
        if on_report is not None:
            on_report(report)

    try:
        current = initialize_pseudo_labels(studies, foundation, threads)
        _emit(iteration_report(1, current, truth, threads=threads))
    except CineSelftrainError as e:
        raise RoundFailed(1, e, reports) from e

    model = None
    for k in range(1, cfg.rounds + 1):
        logger.info("Self-training round %d/%d", k, cfg.rounds)
        try:
            model, current = run_round(current, cfg, threads)
            _emit(
                iteration_report(
                    k + 1, current, truth, model.final_loss, threads
                )
            )
        except CineSelftrainError as e:
            raise RoundFailed(k + 1, e, reports) from e
    return SelfTrainResult(model, current, reports)
