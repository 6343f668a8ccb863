"""Per-voxel features of the linear student segmenter."""

import dataclasses
from typing import Iterable, Tuple

import numpy as np
from scipy import ndimage

from cine_selftrain.grid import ScalarVolume

SMOOTHING_SIGMAS: Tuple[float, ...] = (1.0, 2.0, 4.0)
GRADIENT_SIGMA = 1.0
TRUNCATE = 3.0

FEATURE_NAMES: Tuple[str, ...] = (
    'intensity',
    'smoothed_1',
    'smoothed_2',
    'smoothed_4',
    'gradient_magnitude',
    'x',
    'y',
    'z',
    'bias',
)
NUM_FEATURES = len(FEATURE_NAMES)


@dataclasses.dataclass(frozen=True)
class IntensityNormalization:
    """Affine map sending ``[minimum, maximum]`` onto ``[0, 1]``."""

    minimum: float = 0.0
    maximum: float = 1.0

    def __post_init__(self) -> None:
        if not (np.isfinite(self.minimum) and np.isfinite(self.maximum)):
            raise ValueError("Normalization bounds must be finite")
        if self.maximum < self.minimum:
            raise ValueError(
                f"Normalization maximum {self.maximum} is below minimum "
                f"{self.minimum}"
            )

    @classmethod
    def fit(cls, images: Iterable[ScalarVolume]) -> 'IntensityNormalization':
        """The intensity range of `images`."""
        lows, highs = [], []
        for image in images:
            lows.append(float(image.values.min()))
            highs.append(float(image.values.max()))
        if not lows:
            raise ValueError("Cannot fit a normalization to zero images")
        return cls(min(lows), max(highs))

    @property
    def scale(self) -> float:
        span = self.maximum - self.minimum
        return span if span > 0 else 1.0

    def apply(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=np.float64)
        return (values - self.minimum) / self.scale


def smooth(values: np.ndarray, sigma: float) -> np.ndarray:
    """Gaussian smoothing with the kernel renormalised at the borders.

    Voxels outside the grid are treated as missing rather than zero, so a
    constant image stays constant up to rounding.
    """
    weights = ndimage.gaussian_filter(
        np.ones_like(values),
        sigma,
        mode='constant',
        cval=0.0,
        truncate=TRUNCATE,
    )
    smoothed = ndimage.gaussian_filter(
        values, sigma, mode='constant', cval=0.0, truncate=TRUNCATE
    )
    return smoothed / weights


def gradient_magnitude(values: np.ndarray) -> np.ndarray:
    """Central-difference gradient norm in voxel units.

    Axes of length one contribute nothing.
    """
    squared = np.zeros_like(values)
    for axis, n in enumerate(values.shape):
        if n > 1:
            squared += np.gradient(values, axis=axis) ** 2
    return np.sqrt(squared)


def extract_features(
    image: ScalarVolume, normalization: IntensityNormalization
) -> np.ndarray:
    """The feature matrix of every voxel.

    :param image: The intensity frame.
    :param normalization: Intensity map fitted on the training frames.
    :return: ``(nz * ny * nx, NUM_FEATURES)`` float64 array, rows in
        row-major voxel order and columns as in :data:`FEATURE_NAMES`.
    """
    values = normalization.apply(image.values)
    nz, ny, nx = values.shape
    channels = [values]
    smoothed = {sigma: smooth(values, sigma) for sigma in SMOOTHING_SIGMAS}
    channels.extend(smoothed[sigma] for sigma in SMOOTHING_SIGMAS)
    channels.append(gradient_magnitude(smoothed[GRADIENT_SIGMA]))

    z, y, x = np.meshgrid(
        np.arange(nz) / nz, np.arange(ny) / ny, np.arange(nx) / nx,
        indexing='ij',
    )
    channels.extend((x, y, z, np.ones_like(values)))
    return np.stack([c.ravel() for c in channels], axis=1)
