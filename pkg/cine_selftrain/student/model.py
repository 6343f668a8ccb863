"""Linear multinomial voxel classifier trained on (frame, label) pairs."""

import dataclasses
import json
import logging
import math
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from cine_selftrain.errors import (
    GridMismatch,
    InvalidConfigValue,
    InvalidVolume,
    MalformedManifestError,
    TrainingDiverged,
    TrainingError,
)
from cine_selftrain.grid import (
    NUM_CLASSES,
    STRUCTURES,
    VESSELS,
    Frame,
    GridShape,
    LabelVolume,
    ScalarVolume,
    Spacing,
    StructureId,
    check_same_grid,
)
from cine_selftrain.metrics.morphology import keep_largest_components
from cine_selftrain.student.features import (
    FEATURE_NAMES,
    NUM_FEATURES,
    IntensityNormalization,
    extract_features,
)
from cine_selftrain.student.loss import LossWeights, combined_loss, softmax
from cine_selftrain.utils.multi_processing import ordered_map
from cine_selftrain.utils.seeding import substream

logger = logging.getLogger(__name__)

MODEL_SCHEMA_VERSION = 1

#: Structures whose stray components are removed by post-processing.
POSTPROCESSED = tuple(s for s in STRUCTURES if s not in VESSELS)


@dataclasses.dataclass(frozen=True)
class TrainConfig:
    """Optimisation settings of the student.

    :param epochs: Passes over the training voxels.
    :param batch_voxels: Voxels per gradient step. ``0`` selects full-batch
        mode where every step uses all voxels of one frame.
    :param learning_rate: Step size of momentum SGD.
    :param seed: Root of the sampling and shuffling streams.
    :param class_balance: Draw an equal number of voxels of every class
        present in a frame instead of sampling voxels uniformly.
    :param dice_weight: Weight of the soft-Dice term.
    :param ce_weight: Weight of the cross-entropy term.
    :param postprocess_largest_component: Keep only the largest component
        of every non-vessel structure after prediction.
    :param voxels_per_frame: Training voxels drawn from each frame in
        mini-batch mode.
    :param momentum: Momentum coefficient, in ``[0, 1)``.
    """

    epochs: int = 100
    batch_voxels: int = 1024
    learning_rate: float = 0.5
    seed: int = 0
    class_balance: bool = True
    dice_weight: float = 1.0
    ce_weight: float = 1.0
    postprocess_largest_component: bool = False
    voxels_per_frame: int = 4096
    momentum: float = 0.9

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise InvalidConfigValue('training.epochs', "must be at least 1")
        if self.batch_voxels < 0:
            raise InvalidConfigValue(
                'training.batch_voxels', "must be non-negative"
            )
        if not self.learning_rate > 0:
            raise InvalidConfigValue(
                'training.learning_rate', "must be positive"
            )
        if self.dice_weight < 0 or self.ce_weight < 0:
            raise InvalidConfigValue(
                'training.dice_weight', "loss weights must be non-negative"
            )
        if self.dice_weight + self.ce_weight <= 0:
            raise InvalidConfigValue(
                'training.ce_weight', "loss weights must not both be zero"
            )
        if self.voxels_per_frame < 1:
            raise InvalidConfigValue(
                'training.voxels_per_frame', "must be at least 1"
            )
        if not 0.0 <= self.momentum < 1.0:
            raise InvalidConfigValue('training.momentum', "must be in [0, 1)")
        if self.seed < 0:
            raise InvalidConfigValue('training.seed', "must be non-negative")

    @property
    def loss_weights(self) -> LossWeights:
        return LossWeights(self.dice_weight, self.ce_weight)

    @property
    def full_batch(self) -> bool:
        return self.batch_voxels == 0


@dataclasses.dataclass(frozen=True, eq=False)
class StudentModel:
    """Weights and intensity normalization of a trained student.

    :param weights: ``(NUM_CLASSES, NUM_FEATURES)`` matrix; class logits are
        ``weights @ features``.
    :param normalization: The intensity range of the training frames.
    :param epochs_run: Number of completed epochs.
    :param final_loss: Loss of the last gradient step.
    :param loss_history: Mean loss of every epoch.
    :param shape: Grid of the training frames. ``None`` accepts any grid.
    :param spacing: Voxel spacing of the training frames.
    """

    weights: np.ndarray
    normalization: IntensityNormalization = IntensityNormalization()
    epochs_run: int = 0
    final_loss: Optional[float] = None
    loss_history: Tuple[float, ...] = ()
    shape: Optional[GridShape] = None
    spacing: Optional[Spacing] = None

    def __post_init__(self) -> None:
        weights = np.array(self.weights, dtype=np.float64, copy=True)
        if weights.shape != (NUM_CLASSES, NUM_FEATURES):
            raise ValueError(
                f"Expected a {NUM_CLASSES}x{NUM_FEATURES} weight matrix, "
                f"got shape {weights.shape}"
            )
        if not np.isfinite(weights).all():
            raise ValueError("Model weights must be finite")
        weights.flags.writeable = False
        object.__setattr__(self, 'weights', weights)
        object.__setattr__(self, 'loss_history', tuple(self.loss_history))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, StudentModel):
            return NotImplemented
        return (
            np.array_equal(self.weights, other.weights)
            and self.normalization == other.normalization
            and self.epochs_run == other.epochs_run
            and self.final_loss == other.final_loss
            and self.loss_history == other.loss_history
            and self.shape == other.shape
            and self.spacing == other.spacing
        )

    @classmethod
    def zeros(
        cls, normalization: IntensityNormalization = IntensityNormalization()
    ) -> 'StudentModel':
        return cls(np.zeros((NUM_CLASSES, NUM_FEATURES)), normalization)

    def logits(self, image: ScalarVolume) -> np.ndarray:
        """``(voxels, NUM_CLASSES)`` class scores of every voxel."""
        return extract_features(image, self.normalization) @ self.weights.T

    def to_dict(self) -> Dict[str, Any]:
        return {
            'schema_version': MODEL_SCHEMA_VERSION,
            'feature_names': list(FEATURE_NAMES),
            'classes': [StructureId(c).label for c in range(NUM_CLASSES)],
            'weights': self.weights.tolist(),
            'normalization': {
                'minimum': self.normalization.minimum,
                'maximum': self.normalization.maximum,
            },
            'epochs_run': self.epochs_run,
            'final_loss': self.final_loss,
            'loss_history': list(self.loss_history),
            'grid': self._grid_dict(),
        }

    def _grid_dict(self) -> Optional[Dict[str, List[float]]]:
        if self.shape is None or self.spacing is None:
            return None
        return {
            'shape': [self.shape.nx, self.shape.ny, self.shape.nz],
            'spacing': [self.spacing.dx, self.spacing.dy, self.spacing.dz],
        }

    @classmethod
    def from_dict(
        cls, document: Dict[str, Any], source: str = '<model>'
    ) -> 'StudentModel':
        """Rebuild a model from :meth:`to_dict` output.

        :raises MalformedManifestError: If the document is not a model of
            this schema version and feature set.
        """
        try:
            version = document['schema_version']
            if version != MODEL_SCHEMA_VERSION:
                raise ValueError(f"unsupported schema version {version}")
            if tuple(document['feature_names']) != FEATURE_NAMES:
                raise ValueError("feature definition does not match")
            normalization = document['normalization']
            grid = document.get('grid')
            shape = spacing = None
            if grid is not None:
                shape = GridShape(*(int(n) for n in grid['shape']))
                spacing = Spacing(*(float(d) for d in grid['spacing']))
            return cls(
                weights=np.asarray(document['weights'], dtype=np.float64),
                normalization=IntensityNormalization(
                    float(normalization['minimum']),
                    float(normalization['maximum']),
                ),
                epochs_run=int(document['epochs_run']),
                final_loss=document['final_loss'],
                loss_history=tuple(document['loss_history']),
                shape=shape,
                spacing=spacing,
            )
        except (KeyError, TypeError, ValueError, InvalidVolume) as e:
            raise MalformedManifestError(source, str(e)) from e


def save_model(model: StudentModel, path: str) -> None:
    with open(path, 'w') as f:
        json.dump(model.to_dict(), f, indent=2)
        f.write('\n')


def load_model(path: str) -> StudentModel:
    try:
        with open(path) as f:
            document = json.load(f)
    except json.JSONDecodeError as e:
        raise MalformedManifestError(path, str(e)) from e
    return StudentModel.from_dict(document, source=path)


def _sample_indices(
    target: np.ndarray,
    count: int,
    class_balance: bool,
    rng: np.random.Generator,
) -> np.ndarray:
    if not class_balance:
        return np.sort(
            rng.choice(target.size, size=min(count, target.size), replace=False)
        )
    classes = np.unique(target)
    share = max(1, count // len(classes))
    picks = []
    for c in classes:
        members = np.flatnonzero(target == c)
        picks.append(
            rng.choice(members, size=share, replace=members.size < share)
        )
    return np.concatenate(picks)


def _training_samples(
    pairs: Sequence[Frame],
    normalization: IntensityNormalization,
    cfg: TrainConfig,
    threads: Optional[int],
) -> List[Tuple[np.ndarray, np.ndarray]]:
    def _sample(indexed: Tuple[int, Frame]) -> Tuple[np.ndarray, np.ndarray]:
        index, (image, labels) = indexed
        features = extract_features(image, normalization)
        target = labels.labels.ravel().astype(np.intp)
        if cfg.full_batch:
            return features, target
        rng = substream(cfg.seed, 'sample', index)
        chosen = _sample_indices(
            target, cfg.voxels_per_frame, cfg.class_balance, rng
        )
        return features[chosen], target[chosen]

    return ordered_map(_sample, list(enumerate(pairs)), threads)


def _batches(
    samples: List[Tuple[np.ndarray, np.ndarray]],
    cfg: TrainConfig,
    rng: np.random.Generator,
):
    if cfg.full_batch:
        for i in rng.permutation(len(samples)):
            yield samples[i]
        return
    features, target = samples[0]
    order = rng.permutation(target.size)
    for start in range(0, target.size, cfg.batch_voxels):
        chosen = order[start : start + cfg.batch_voxels]
        yield features[chosen], target[chosen]


def train(
    pairs: Sequence[Frame],
    cfg: TrainConfig = TrainConfig(),
    threads: Optional[int] = 1,
) -> StudentModel:
    """Train a fresh student on (intensity frame, label frame) pairs.

    Weights start at zero and follow momentum SGD on
    :func:`~cine_selftrain.student.loss.combined_loss`. In mini-batch mode
    each frame contributes ``cfg.voxels_per_frame`` voxels drawn once, and
    every epoch visits that pool in a new random order. In full-batch mode
    every step uses one whole frame, frames in a new random order per
    epoch. The result depends only on `pairs` and `cfg`.

    :param pairs: The training frames with their (pseudo-)labels.
    :param cfg: The optimisation settings.
    :param threads: Workers used for feature extraction.
    :return: The trained model.
    :raises TrainingError: If `pairs` is empty.
    :raises GridMismatch: If the pairs do not share one grid.
    :raises TrainingDiverged: If the loss or the weights stop being finite.
    """
    pairs = list(pairs)
    if not pairs:
        raise TrainingError("Cannot train a student on an empty training set")
    reference = pairs[0][1]
    for image, labels in pairs:
        check_same_grid(reference, labels)
        if (image.shape, image.spacing) != (labels.shape, labels.spacing):
            raise GridMismatch(
                (image.shape, image.spacing), (labels.shape, labels.spacing)
            )

    normalization = IntensityNormalization.fit(image for image, _ in pairs)
    samples = _training_samples(pairs, normalization, cfg, threads)
    if not cfg.full_batch:
        samples = [
            (
                np.concatenate([f for f, _ in samples]),
                np.concatenate([t for _, t in samples]),
            )
        ]

    rng = substream(cfg.seed, 'shuffle')
    weights = np.zeros((NUM_CLASSES, NUM_FEATURES))
    velocity = np.zeros_like(weights)
    history: List[float] = []
    loss = math.nan
    checkpoint = max(1, cfg.epochs // 10)
    for epoch in range(1, cfg.epochs + 1):
        losses = []
        for features, target in _batches(samples, cfg, rng):
            probs = softmax(features @ weights.T)
            loss, grad_logits = combined_loss(
                probs, target, cfg.loss_weights
            )
            if not math.isfinite(loss):
                raise TrainingDiverged(epoch, loss)
            velocity = cfg.momentum * velocity - cfg.learning_rate * (
                grad_logits.T @ features
            )
            weights = weights + velocity
            losses.append(loss)
        if not np.isfinite(weights).all():
            raise TrainingDiverged(epoch, math.nan)
        history.append(math.fsum(losses) / len(losses))
        if epoch % checkpoint == 0 or epoch == cfg.epochs:
            logger.info(
                "Epoch %d/%d: loss %.5f", epoch, cfg.epochs, history[-1]
            )

    return StudentModel(
        weights=weights,
        normalization=normalization,
        epochs_run=cfg.epochs,
        final_loss=float(loss),
        loss_history=tuple(history),
        shape=reference.shape,
        spacing=reference.spacing,
    )


def predict(
    model: StudentModel,
    image: ScalarVolume,
    cfg: Optional[TrainConfig] = None,
) -> LabelVolume:
    """Label every voxel with its highest-scoring class.

    Ties go to the lowest class code. With
    ``cfg.postprocess_largest_component`` every structure except the
    vessels is reduced to its largest component.

    :raises GridMismatch: If the model was trained on frames of another grid
        or spacing.
    """
    if model.shape is not None and (image.shape, image.spacing) != (
        model.shape,
        model.spacing,
    ):
        raise GridMismatch(
            (image.shape, image.spacing),
            (model.shape, model.spacing),
            "Frame grid {} does not match the model's training grid {}",
        )
    scores = model.logits(image)
    labels = np.argmax(scores, axis=1).astype(np.uint8)
    volume = LabelVolume(image.shape, image.spacing, labels)
    if cfg is not None and cfg.postprocess_largest_component:
        volume = keep_largest_components(volume, POSTPROCESSED)
    return volume


class StudentSegmenter:
    """A trained student used as a :class:`SegmenterModel`."""

    def __init__(
        self, model: StudentModel, cfg: Optional[TrainConfig] = None
    ) -> None:
        self.model = model
        self.cfg = cfg

    def predict(self, image: ScalarVolume, context: Any = None) -> LabelVolume:
        return predict(self.model, image, self.cfg)
