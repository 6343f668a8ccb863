from unittest import TestCase

import numpy as np

from cine_selftrain.grid import Spacing
from cine_selftrain.metrics import (
    euclidean_distance_transform,
    squared_distance_transform,
)

from tests.common import random_spacing
from tests.oracles import brute_force_edt


class TestEuclideanDistanceTransform(TestCase):

    def test_full_mask_is_zero(self):
        mask = np.ones((3, 4, 5), dtype=bool)
        np.testing.assert_array_equal(
            np.zeros(mask.shape), euclidean_distance_transform(mask, Spacing())
        )

    def test_empty_mask_is_infinite(self):
        mask = np.zeros((3, 4, 5), dtype=bool)
        self.assertTrue(
            np.isinf(euclidean_distance_transform(mask, Spacing())).all()
        )

    def test_line(self):
        mask = np.zeros((1, 1, 5), dtype=bool)
        mask[0, 0, 0] = True
        np.testing.assert_array_equal(
            [0.0, 1.0, 2.0, 3.0, 4.0],
            euclidean_distance_transform(mask, Spacing()).ravel(),
        )

    def test_anisotropic_spacing(self):
        mask = np.zeros((3, 3, 3), dtype=bool)
        mask[0, 0, 0] = True
        dist = euclidean_distance_transform(mask, Spacing(1.0, 2.0, 3.0))
        self.assertAlmostEqual(1.0, dist[0, 0, 1])
        self.assertAlmostEqual(2.0, dist[0, 1, 0])
        self.assertAlmostEqual(3.0, dist[1, 0, 0])
        self.assertAlmostEqual(np.sqrt(4 + 16 + 36), dist[2, 2, 2])

    def test_squared_is_square_of_distance(self):
        rng = np.random.default_rng(2)
        mask = rng.random((6, 5, 4)) < 0.1
        mask[0, 0, 0] = True
        spacing = Spacing(0.5, 1.5, 2.0)
        np.testing.assert_allclose(
            squared_distance_transform(mask, spacing),
            euclidean_distance_transform(mask, spacing) ** 2,
        )

    def test_matches_brute_force(self):
        rng = np.random.default_rng(1234)
        for i in range(150):
            shape = tuple(int(n) for n in rng.integers(1, 13, size=3))
            density = float(rng.choice([0.01, 0.05, 0.2, 0.6]))
            mask = rng.random(shape) < density
            spacing = random_spacing(rng)
            with self.subTest(i=i, shape=shape, spacing=spacing):
                expected = brute_force_edt(mask, spacing)
                actual = euclidean_distance_transform(mask, spacing)
                if not mask.any():
                    self.assertTrue(np.isinf(actual).all())
                    continue
                self.assertLess(np.max(np.abs(actual - expected)), 1e-9)
