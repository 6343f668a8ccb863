"""Cross-validated comparison of training-label variants.

Subjects are split into folds. For every held-out fold a fresh student is
trained for a single round on the remaining subjects, with labels taken
from:

* ``manual``: the reference labels;
* ``pseudo``: the foundation segmenter's labels;
* ``mixed``: foundation labels, except for a small share of frames that
  carry their reference labels.

The ``foundation`` variant evaluates the foundation labels themselves. All
variants are scored against the reference labels of the held-out subjects.
"""

import dataclasses
import logging
from enum import Enum
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

from cine_selftrain.errors import InsufficientData, InvalidConfigValue
from cine_selftrain.foundation import SegmenterModel
from cine_selftrain.grid import CineStudy, Frame, StructureId
from cine_selftrain.metrics.evaluation import (
    FrameMetrics,
    MetricSummary,
    evaluate_studies,
    summarize,
)
from cine_selftrain.selftrain import apply_model, initialize_pseudo_labels
from cine_selftrain.student.model import TrainConfig, train
from cine_selftrain.utils.seeding import substream

logger = logging.getLogger(__name__)


class Variant(str, Enum):
    MANUAL = 'manual'
    FOUNDATION = 'foundation'
    PSEUDO = 'pseudo'
    MIXED = 'mixed'


@dataclasses.dataclass(frozen=True)
class BenchmarkResult:
    """Per-frame rows and per-structure summaries of every variant."""

    rows: Mapping[Variant, List[FrameMetrics]]
    summaries: Mapping[Variant, Dict[StructureId, MetricSummary]]


def split_folds(
    subject_ids: Sequence[str], folds: int, seed: int = 0
) -> List[List[str]]:
    """Deal the shuffled subjects round-robin into `folds` folds.

    :raises InvalidConfigValue: If `folds` is below 2.
    :raises InsufficientData: If there are fewer subjects than folds.
    """
    if folds < 2:
        raise InvalidConfigValue('folds', "need at least 2 folds")
    ids = sorted(subject_ids)
    if len(ids) < folds:
        raise InsufficientData(
            f"Cannot split {len(ids)} subjects into {folds} folds"
        )
    order = substream(seed, 'folds').permutation(len(ids))
    return [sorted(ids[i] for i in order[f::folds]) for f in range(folds)]


def _mixed_pairs(
    pseudo: Sequence[CineStudy],
    truth: Mapping[str, CineStudy],
    manual_fraction: float,
    seed: int,
    fold: int,
) -> List[Frame]:
    keys = [
        (study.subject_id, t)
        for study in pseudo
        for t in range(study.num_frames)
    ]
    count = max(1, round(manual_fraction * len(keys)))
    rng = substream(seed, 'mixed', fold)
    manual = set(rng.choice(len(keys), size=count, replace=False).tolist())
    by_id = {s.subject_id: s for s in pseudo}
    pairs = []
    for i, (subject_id, t) in enumerate(keys):
        source = truth[subject_id] if i in manual else by_id[subject_id]
        pairs.append(source.frames[t])
    return pairs


def cross_validate(
    studies: Sequence[CineStudy],
    truth: Mapping[str, CineStudy],
    foundation: SegmenterModel,
    train_cfg: TrainConfig = TrainConfig(),
    folds: int = 5,
    variants: Sequence[Variant] = tuple(Variant),
    manual_fraction: float = 0.05,
    seed: int = 0,
    threads: Optional[int] = 1,
) -> BenchmarkResult:
    """Score every variant on held-out subjects, fold by fold.

    :param studies: The subjects; their own labels are not used.
    :param truth: Reference labels keyed by subject id.
    :param foundation: The segmenter producing the pseudo-labels.
    :param train_cfg: Settings of every student.
    :param folds: Number of folds.
    :param variants: The variants to run.
    :param manual_fraction: Share of reference-labelled training frames of
        the ``mixed`` variant.
    :param seed: Root of the fold split and the mixed-frame draw.
    :param threads: Worker count.
    """
    if not 0.0 < manual_fraction < 1.0:
        raise InvalidConfigValue('manual_fraction', "must be in (0, 1)")
    variants = [Variant(v) for v in variants]
    studies = [dataclasses.replace(s, is_manual=False) for s in studies]
    by_id = {s.subject_id: s for s in studies}
    pseudo_all = {
        s.subject_id: s
        for s in initialize_pseudo_labels(studies, foundation, threads)
    }
    rows: Dict[Variant, List[FrameMetrics]] = {v: [] for v in variants}

    for f, held_out in enumerate(split_folds(list(by_id), folds, seed)):
        held = set(held_out)
        test = [by_id[i] for i in held_out]
        pseudo = [pseudo_all[i] for i in sorted(by_id) if i not in held]
        labelled = [truth[s.subject_id] for s in pseudo]
        for variant in variants:
            logger.info("Fold %d/%d, variant %s", f + 1, folds, variant.value)
            if variant is Variant.FOUNDATION:
                predicted = [pseudo_all[i] for i in held_out]
            else:
                if variant is Variant.MANUAL:
                    pairs = [fr for s in labelled for fr in s.frames]
                elif variant is Variant.PSEUDO:
                    pairs = [fr for s in pseudo for fr in s.frames]
                else:
                    pairs = _mixed_pairs(
                        pseudo, truth, manual_fraction, seed, f
                    )
                model = train(pairs, train_cfg, threads)
                predicted = apply_model(model, test, train_cfg, threads)
            rows[variant].extend(evaluate_studies(predicted, truth, threads))

    return BenchmarkResult(
        rows=rows,
        summaries={v: summarize(r) for v, r in rows.items()},
    )


def summary_table(
    result: BenchmarkResult,
) -> List[Tuple[Variant, StructureId, MetricSummary]]:
    """``(variant, structure, summary)`` rows in variant, structure order."""
    return [
        (variant, s, summary)
        for variant, per_structure in result.summaries.items()
        for s, summary in per_structure.items()
    ]
