import shutil
import tempfile
from typing import Optional, Sequence, Tuple
from unittest import TestCase

import numpy as np

from cine_selftrain.grid import (
    CineStudy,
    GridShape,
    LabelVolume,
    ScalarVolume,
    Spacing,
    StructureId,
)
from cine_selftrain.phantom import PhantomConfig

#: A phantom cohort small enough for unit tests: 2 mm voxels on a 33^3 grid
#: cover the same 64 mm field of view as the defaults.
SMALL_PHANTOM = PhantomConfig(
    shape=GridShape(33, 33, 33),
    spacing=Spacing(2.0, 2.0, 2.0),
    frames=4,
    studies=3,
)


def label_volume(
    labels: np.ndarray, spacing: Spacing = Spacing()
) -> LabelVolume:
    """A label volume whose grid is taken from the ``(z, y, x)`` array."""
    labels = np.asarray(labels)
    shape = GridShape.from_array_shape(labels.shape)
    return LabelVolume(shape, spacing, labels)


def scalar_volume(
    values: np.ndarray, spacing: Spacing = Spacing()
) -> ScalarVolume:
    values = np.asarray(values)
    shape = GridShape.from_array_shape(values.shape)
    return ScalarVolume(shape, spacing, values)


def box(
    shape_zyx: Tuple[int, int, int],
    corner: Tuple[int, int, int],
    size: Tuple[int, int, int],
) -> np.ndarray:
    """Boolean mask of the box starting at voxel `corner` = ``(x, y, z)``."""
    mask = np.zeros(shape_zyx, dtype=bool)
    x, y, z = corner
    sx, sy, sz = size
    mask[z : z + sz, y : y + sy, x : x + sx] = True
    return mask


def study_from_labels(
    subject_id: str,
    labels: Sequence[np.ndarray],
    spacing: Spacing = Spacing(),
    is_manual: bool = False,
    images: Optional[Sequence[np.ndarray]] = None,
) -> CineStudy:
    """A study whose images are the label codes, unless `images` are given."""
    frames = []
    for t, array in enumerate(labels):
        values = array if images is None else images[t]
        frames.append(
            (
                scalar_volume(np.asarray(values, dtype=np.float32), spacing),
                label_volume(array, spacing),
            )
        )
    return CineStudy(subject_id, tuple(frames), is_manual=is_manual)


def random_labels(
    rng: np.random.Generator,
    shape_zyx: Tuple[int, ...],
    structures: Sequence[StructureId] = tuple(StructureId),
    density: float = 0.5,
) -> np.ndarray:
    """Random codes from `structures`, background with prob. 1 - density."""
    codes = rng.choice([int(s) for s in structures], size=shape_zyx)
    keep = rng.random(shape_zyx) < density
    return np.where(keep, codes, 0).astype(np.uint8)


def random_spacing(rng: np.random.Generator) -> Spacing:
    return Spacing(*(float(d) for d in rng.choice([0.5, 1.0, 1.5, 2.5], 3)))


class TempDirTest(TestCase):
    """Gives every test a fresh scratch directory."""

    def setUp(self) -> None:
        super().setUp()
        self.tmp = tempfile.mkdtemp(prefix='cst_test_')

    def tearDown(self) -> None:
        shutil.rmtree(self.tmp, ignore_errors=True)
        super().tearDown()
