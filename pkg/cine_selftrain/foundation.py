"""Simulated foundation segmenter.

The foundation model segments every frame of a 4D study on its own, so its
labels are individually plausible but inconsistent over time. The simulator
reproduces that behaviour by corrupting ground-truth labels with noise drawn
from a seed stream private to ``(seed, subject, frame)``.

Any object with a ``predict(image, context)`` method can seed the
self-training loop; see :class:`SegmenterModel`.
"""

import dataclasses
import logging
from typing import (
    Dict,
    Mapping,
    NamedTuple,
    Optional,
    Protocol,
    Tuple,
    runtime_checkable,
)

import numpy as np
from scipy import ndimage

from cine_selftrain.errors import InvalidConfigValue
from cine_selftrain.grid import (
    PRECEDENCE,
    CineStudy,
    LabelVolume,
    ScalarVolume,
    Spacing,
    StructureId,
)
from cine_selftrain.phantom import paint_by_precedence
from cine_selftrain.utils.multi_processing import ordered_map
from cine_selftrain.utils.seeding import substream

logger = logging.getLogger(__name__)

_FACE_NEIGHBOURS = ndimage.generate_binary_structure(3, 1)


class FrameContext(NamedTuple):
    """Identifies the frame a segmenter is asked to label."""

    subject_id: str
    frame_index: int


@runtime_checkable
class SegmenterModel(Protocol):
    """Anything that turns an intensity frame into a label frame.

    The self-training loop only ever calls ``predict``. Training is not part
    of the protocol: the student is fitted by
    :func:`cine_selftrain.student.train` and wrapped in a
    :class:`~cine_selftrain.student.StudentSegmenter`, while the simulated
    foundation segmenter and :class:`PrecomputedSegmenter` are predict-only.
    """

    def predict(
        self, image: ScalarVolume, context: FrameContext
    ) -> LabelVolume:
        ...


@dataclasses.dataclass(frozen=True)
class CorruptionConfig:
    """Error model of the simulated foundation segmenter.

    :param seed: Root of every corruption stream.
    :param boundary_sigma_mm: Std of the per-structure dilation/erosion
        radius.
    :param dropout_rate: Probability that a sphere is cut out of a
        structure.
    :param blob_rate: Probability that a detached sphere of a structure is
        added to the background.
    :param swap_rate: Probability that a boundary patch of a structure is
        handed to a neighbouring structure.
    :param dropout_radius_mm: Radius of the cut-out sphere.
    :param blob_radius_mm: Radius of the spurious sphere.
    :param swap_radius_mm: Radius of the relabelled boundary patch.
    """

    seed: int = 0
    boundary_sigma_mm: float = 1.0
    dropout_rate: float = 0.1
    blob_rate: float = 0.15
    swap_rate: float = 0.1
    dropout_radius_mm: float = 4.0
    blob_radius_mm: float = 2.0
    swap_radius_mm: float = 2.0

    def __post_init__(self) -> None:
        if self.seed < 0:
            raise InvalidConfigValue('corruption.seed', "must be non-negative")
        if self.boundary_sigma_mm < 0:
            raise InvalidConfigValue(
                'corruption.boundary_sigma_mm', "must be non-negative"
            )
        for name in ('dropout_rate', 'blob_rate', 'swap_rate'):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise InvalidConfigValue(
                    f'corruption.{name}', "must be in [0, 1]"
                )
        for name in ('dropout_radius_mm', 'blob_radius_mm', 'swap_radius_mm'):
            if getattr(self, name) <= 0:
                raise InvalidConfigValue(
                    f'corruption.{name}', "must be positive"
                )

    @classmethod
    def identity(cls, seed: int = 0) -> 'CorruptionConfig':
        """A configuration that leaves labels untouched."""
        return cls(
            seed=seed,
            boundary_sigma_mm=0.0,
            dropout_rate=0.0,
            blob_rate=0.0,
            swap_rate=0.0,
        )

    @property
    def is_identity(self) -> bool:
        return (
            self.boundary_sigma_mm == 0
            and self.dropout_rate == 0
            and self.blob_rate == 0
            and self.swap_rate == 0
        )


def ball(radius_mm: float, spacing: Spacing) -> np.ndarray:
    """Ellipsoidal structuring element of the given physical radius.

    Returns a ``(1, 1, 1)`` array if the radius rounds to zero voxels on
    every axis.
    """
    half = [int(round(radius_mm / d)) for d in spacing.zyx]
    if not any(half):
        return np.ones((1, 1, 1), dtype=bool)
    z, y, x = np.ogrid[
        -half[0] : half[0] + 1, -half[1] : half[1] + 1, -half[2] : half[2] + 1
    ]
    dz, dy, dx = spacing.zyx
    return (z * dz) ** 2 + (y * dy) ** 2 + (x * dx) ** 2 <= radius_mm**2


def _sphere_at(
    shape: Tuple[int, ...], spacing: Spacing, center: Tuple[int, ...], r: float
) -> np.ndarray:
    grids = np.ogrid[tuple(slice(0, n) for n in shape)]
    distance = sum(
        ((g - c) * d) ** 2 for g, c, d in zip(grids, center, spacing.zyx)
    )
    return distance <= r**2


def _random_voxel(mask: np.ndarray, rng: np.random.Generator) -> Tuple:
    candidates = np.flatnonzero(mask)
    pick = candidates[rng.integers(len(candidates))]
    return np.unravel_index(pick, mask.shape)


def _perturb_boundary(
    mask: np.ndarray,
    spacing: Spacing,
    cfg: CorruptionConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    grow = rng.random() < 0.5
    radius = abs(rng.normal(0.0, cfg.boundary_sigma_mm))
    element = ball(radius, spacing)
    if element.size == 1 or not mask.any():
        return mask
    if grow:
        return ndimage.binary_dilation(mask, structure=element)
    return ndimage.binary_erosion(mask, structure=element)


def _swap_patch(
    labels: np.ndarray,
    s: StructureId,
    spacing: Spacing,
    cfg: CorruptionConfig,
    rng: np.random.Generator,
) -> None:
    mask = labels == int(s)
    if not mask.any():
        return
    # Voxels of `s` facing another (non-background) structure.
    others = (labels != int(s)) & (labels != int(StructureId.BACKGROUND))
    touching = mask & ndimage.binary_dilation(
        others, structure=_FACE_NEIGHBOURS
    )
    if not touching.any():
        return
    center = _random_voxel(touching, rng)
    near = ndimage.binary_dilation(
        _point(labels.shape, center), structure=_FACE_NEIGHBOURS
    )
    neighbour_codes = np.unique(labels[near & others])
    target = int(neighbour_codes[rng.integers(len(neighbour_codes))])
    patch = _sphere_at(labels.shape, spacing, center, cfg.swap_radius_mm)
    labels[patch & mask] = target


def _point(shape: Tuple[int, ...], index: Tuple) -> np.ndarray:
    point = np.zeros(shape, dtype=bool)
    point[index] = True
    return point


def _add_blob(
    labels: np.ndarray,
    truth_mask: np.ndarray,
    s: StructureId,
    spacing: Spacing,
    cfg: CorruptionConfig,
    rng: np.random.Generator,
) -> bool:
    own = truth_mask | (labels == int(s))
    background = labels == int(StructureId.BACKGROUND)
    if own.any():
        distance = ndimage.distance_transform_edt(~own, sampling=spacing.zyx)
    else:
        distance = np.full(labels.shape, np.inf)
    # Every blob voxel then lies at least three voxels from the structure.
    clearance = cfg.blob_radius_mm + 3.0 * max(spacing.zyx)
    candidates = background & (distance >= clearance)
    if not candidates.any():
        return False
    center = _random_voxel(candidates, rng)
    sphere = _sphere_at(labels.shape, spacing, center, cfg.blob_radius_mm)
    labels[sphere & background] = int(s)
    return True


def corrupt(
    truth: LabelVolume,
    frame_index: int,
    cfg: CorruptionConfig,
    subject_id: str = '',
) -> LabelVolume:
    """Simulate the foundation model's labelling of one frame.

    Each structure, in precedence order, is dilated or eroded by a random
    radius, may lose a random sphere around one of its voxels and is then
    painted back by precedence. Detached blobs are then added to the
    background, and finally boundary patches are handed to a touching
    structure.

    :param truth: The ground-truth labels of the frame.
    :param frame_index: The frame's position in its study.
    :param cfg: The error model.
    :param subject_id: The study the frame belongs to.
    :return: The corrupted labels.
    """
    if cfg.is_identity:
        return truth
    rng = substream(cfg.seed, subject_id, frame_index)
    spacing = truth.spacing
    labels = truth.labels
    truth_masks = {s: labels == int(s) for s in PRECEDENCE}

    masks: Dict[StructureId, np.ndarray] = {}
    for s in PRECEDENCE:
        mask = truth_masks[s]
        if cfg.boundary_sigma_mm > 0:
            mask = _perturb_boundary(mask, spacing, cfg, rng)
        if rng.random() < cfg.dropout_rate and mask.any():
            center = _random_voxel(mask, rng)
            mask = mask & ~_sphere_at(
                mask.shape, spacing, center, cfg.dropout_radius_mm
            )
        masks[s] = mask
    out = paint_by_precedence(masks, labels.shape)

    for s in PRECEDENCE:
        if rng.random() < cfg.blob_rate:
            if not _add_blob(out, truth_masks[s], s, spacing, cfg, rng):
                logger.debug(
                    "No room for a %s blob in frame %d of '%s'",
                    s.label,
                    frame_index,
                    subject_id,
                )
    for s in PRECEDENCE:
        if rng.random() < cfg.swap_rate:
            _swap_patch(out, s, spacing, cfg, rng)
    return truth.replace(out)


def simulate_foundation(
    study: CineStudy, cfg: CorruptionConfig, threads: Optional[int] = 1
) -> CineStudy:
    """Replace every frame's labels with :func:`corrupt` of its truth."""
    labels = ordered_map(
        lambda t: corrupt(study.labels[t], t, cfg, study.subject_id),
        range(study.num_frames),
        threads,
    )
    return study.with_labels(labels)


class FoundationSimulator:
    """A :class:`SegmenterModel` backed by hidden ground truth.

    The truth is looked up by subject and frame and never leaves the
    simulator except through :func:`corrupt`.
    """

    def __init__(
        self, truth: Mapping[str, CineStudy], cfg: CorruptionConfig
    ) -> None:
        self._truth = dict(truth)
        self.cfg = cfg

    def predict(
        self, image: ScalarVolume, context: FrameContext
    ) -> LabelVolume:
        try:
            study = self._truth[context.subject_id]
        except KeyError:
            raise KeyError(
                f"No ground truth for subject '{context.subject_id}'"
            ) from None
        truth = study.labels[context.frame_index]
        return corrupt(truth, context.frame_index, self.cfg, context.subject_id)


class PrecomputedSegmenter:
    """A :class:`SegmenterModel` replaying stored labels."""

    def __init__(self, studies: Mapping[str, CineStudy]) -> None:
        self._studies = dict(studies)

    def predict(
        self, image: ScalarVolume, context: FrameContext
    ) -> LabelVolume:
        study = self._studies[context.subject_id]
        return study.labels[context.frame_index]
