from unittest import TestCase

import numpy as np

from cine_selftrain.errors import GridMismatch, InvalidVolume, LabelRangeError
from cine_selftrain.grid import (
    PRECEDENCE,
    STRUCTURES,
    CineStudy,
    GridShape,
    LabelVolume,
    ScalarVolume,
    Spacing,
    StructureId,
    delinearize,
    foreground_mask,
    linear_index,
)

from tests.common import label_volume, random_labels


class TestSpacingAndShape(TestCase):

    def test_spacing_must_be_positive(self):
        for bad in (0.0, -1.0, float('nan'), float('inf')):
            with self.subTest(bad=bad):
                with self.assertRaises(InvalidVolume):
                    Spacing(1.0, bad, 1.0)

    def test_spacing_axis_order(self):
        spacing = Spacing(0.5, 1.0, 2.0)
        self.assertEqual((2.0, 1.0, 0.5), spacing.zyx)
        self.assertEqual(1.0, spacing.voxel_volume)

    def test_shape_must_be_positive(self):
        with self.assertRaises(InvalidVolume):
            GridShape(4, 0, 4)
        with self.assertRaises(InvalidVolume):
            GridShape(4, 2.5, 4)

    def test_shape_from_array(self):
        shape = GridShape.from_array_shape((4, 3, 2))
        self.assertEqual(GridShape(2, 3, 4), shape)
        self.assertEqual(24, shape.size)


class TestStructureId(TestCase):

    def test_codes_and_names_are_a_bijection(self):
        names = [s.label for s in StructureId]
        self.assertEqual(8, len(set(names)))
        for s in StructureId:
            self.assertIs(s, StructureId.from_label(s.label))
        self.assertEqual(0, StructureId.BACKGROUND)
        self.assertEqual('pulmonary_artery', StructureId(7).label)

    def test_unknown_name(self):
        with self.assertRaises(ValueError):
            StructureId.from_label('spleen')

    def test_structure_sets(self):
        self.assertEqual(7, len(STRUCTURES))
        self.assertNotIn(StructureId.BACKGROUND, STRUCTURES)
        self.assertEqual(set(STRUCTURES), set(PRECEDENCE))
        self.assertIs(StructureId.LV_MYO, PRECEDENCE[0])


class TestVolumes(TestCase):

    def test_flat_and_shaped_values_are_equivalent(self):
        shape = GridShape(2, 3, 4)
        flat = np.arange(24, dtype=np.float32)
        a = ScalarVolume(shape, Spacing(), flat)
        b = ScalarVolume(shape, Spacing(), flat.reshape(4, 3, 2))
        self.assertEqual(a, b)
        self.assertEqual((4, 3, 2), a.values.shape)

    def test_volumes_are_read_only_copies(self):
        source = np.zeros(8, dtype=np.uint8)
        vol = LabelVolume(GridShape(2, 2, 2), Spacing(), source)
        source[0] = 3
        self.assertEqual(0, vol.labels[0, 0, 0])
        with self.assertRaises(ValueError):
            vol.labels[0, 0, 0] = 1

    def test_wrong_length(self):
        with self.assertRaises(InvalidVolume):
            ScalarVolume(GridShape(2, 2, 2), Spacing(), np.zeros(7))

    def test_non_finite_intensities(self):
        values = np.zeros(8)
        values[3] = np.nan
        with self.assertRaises(InvalidVolume):
            ScalarVolume(GridShape(2, 2, 2), Spacing(), values)

    def test_label_range(self):
        with self.assertRaises(LabelRangeError) as ctx:
            LabelVolume(GridShape(2, 1, 1), Spacing(), [0, 8])
        self.assertEqual(8, ctx.exception.value)
        with self.assertRaises(LabelRangeError):
            LabelVolume(GridShape(2, 1, 1), Spacing(), [-1, 0])

    def test_fractional_labels(self):
        with self.assertRaises(LabelRangeError) as ctx:
            LabelVolume(GridShape(2, 1, 1), Spacing(), [0.0, 2.7])
        self.assertEqual(2.7, ctx.exception.value)
        self.assertIn('integral', str(ctx.exception))
        with self.assertRaises(LabelRangeError):
            LabelVolume(GridShape(2, 1, 1), Spacing(), [np.nan, 1.0])
        whole = LabelVolume(GridShape(2, 1, 1), Spacing(), [0.0, 2.0])
        self.assertEqual([0, 2], whole.labels.ravel().tolist())
        self.assertEqual(np.uint8, whole.labels.dtype)

    def test_study_frames_share_a_grid(self):
        a = label_volume(np.zeros((2, 2, 2)))
        b = label_volume(np.zeros((2, 2, 3)))
        image = ScalarVolume(a.shape, a.spacing, np.zeros(8))
        with self.assertRaises(GridMismatch):
            CineStudy('s', ((image, a), (image, b)))
        with self.assertRaises(InvalidVolume):
            CineStudy('s', ())

    def test_with_labels(self):
        a = label_volume(np.zeros((2, 2, 2)))
        image = ScalarVolume(a.shape, a.spacing, np.zeros(8))
        study = CineStudy('s', ((image, a),), is_manual=True)
        b = a.replace(np.full((2, 2, 2), 3))
        updated = study.with_labels([b])
        self.assertEqual(b, updated.labels[0])
        self.assertEqual(a, study.labels[0])
        self.assertTrue(updated.is_manual)
        with self.assertRaises(InvalidVolume):
            study.with_labels([a, b])


class TestForegroundMask(TestCase):

    def test_empty_and_full(self):
        empty = label_volume(np.zeros((2, 2, 2)))
        self.assertFalse(foreground_mask(empty, StructureId.LV).any())
        full = label_volume(np.full((2, 2, 2), int(StructureId.LV)))
        self.assertTrue(foreground_mask(full, StructureId.LV).all())

    def test_two_voxels(self):
        vol = LabelVolume(
            GridShape(2, 1, 1),
            Spacing(),
            [int(StructureId.LV), int(StructureId.RV)],
        )
        self.assertEqual(
            [False, True], foreground_mask(vol, StructureId.RV).ravel().tolist()
        )

    def test_masks_partition_the_grid(self):
        rng = np.random.default_rng(7)
        for i in range(100):
            with self.subTest(i=i):
                shape = tuple(int(n) for n in rng.integers(1, 7, size=3))
                vol = label_volume(random_labels(rng, shape))
                total = np.zeros(shape, dtype=int)
                for s in StructureId:
                    total += foreground_mask(vol, s)
                self.assertTrue((total == 1).all())


class TestLinearIndex(TestCase):

    def test_examples(self):
        self.assertEqual(0, linear_index(GridShape(4, 4, 4), 0, 0, 0))
        self.assertEqual(63, linear_index(GridShape(4, 4, 4), 3, 3, 3))
        self.assertEqual(5, linear_index(GridShape(2, 3, 4), 1, 2, 0))

    def test_out_of_bounds(self):
        shape = GridShape(2, 3, 4)
        for point in ((2, 0, 0), (0, 3, 0), (0, 0, 4), (-1, 0, 0)):
            with self.subTest(point=point):
                with self.assertRaises(IndexError):
                    linear_index(shape, *point)
        with self.assertRaises(IndexError):
            delinearize(shape, 24)

    def test_matches_numpy_layout(self):
        vol = label_volume(np.zeros((4, 3, 2)))
        flat = vol.labels.ravel()
        self.assertEqual(flat.size, vol.shape.size)
        self.assertEqual(
            np.ravel_multi_index((3, 1, 0), (4, 3, 2)),
            linear_index(vol.shape, 0, 1, 3),
        )

    def test_round_trip(self):
        rng = np.random.default_rng(11)
        for i in range(200):
            with self.subTest(i=i):
                shape = GridShape(*(int(n) for n in rng.integers(1, 9, 3)))
                x, y, z = (
                    int(rng.integers(n)) for n in (shape.nx, shape.ny, shape.nz)
                )
                index = linear_index(shape, x, y, z)
                self.assertEqual((x, y, z), delinearize(shape, index))
