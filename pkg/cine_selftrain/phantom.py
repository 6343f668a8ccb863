"""Synthetic beating-heart phantom with exact ground-truth labels.

Every structure is an analytic implicit shape voxelised by testing voxel
centres (positions in mm, origin at the centre of voxel ``(0, 0, 0)``):

* LV blood pool: an ellipsoid; LV myocardium: the enclosing ellipsoidal
  shell;
* RV: an ellipsoid minus the LV (a crescent wrapped around it);
* LA and RA: spheres above the ventricles;
* aorta and pulmonary artery: vertical cylinders leaving the heart upwards.

Frame ``t`` of ``T`` contracts the ventricular cavities by
``c(t) = 1 - A (1 - cos(2 pi t / T)) / 2`` while the myocardial shell
thickens so that its volume stays approximately constant. Overlaps are
resolved by the fixed label precedence of
:data:`cine_selftrain.grid.PRECEDENCE`.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from typing import Dict, List, Optional, Tuple

import numpy as np

from cine_selftrain.errors import InvalidConfigValue, PhantomGeometryError
from cine_selftrain.grid import (
    PRECEDENCE,
    CineStudy,
    GridShape,
    LabelVolume,
    ScalarVolume,
    Spacing,
    StructureId,
)
from cine_selftrain.metrics.morphology import largest_component_mask
from cine_selftrain.utils.multi_processing import ordered_map
from cine_selftrain.utils.seeding import substream

logger = logging.getLogger(__name__)

Vec3 = Tuple[float, float, float]

BACKGROUND_HU = -50.0
MYOCARDIUM_HU = 100.0
BLOOD_HU = 300.0
CATHETER_HU = 800.0


@dataclasses.dataclass(frozen=True)
class StructureGeometry:
    """Baseline shape parameters, all in mm as ``(x, y, z)``."""

    lv_center: Vec3 = (36.0, 32.0, 26.0)
    lv_radii: Vec3 = (9.0, 9.0, 12.0)
    myo_radii: Vec3 = (13.0, 13.0, 16.0)
    rv_center: Vec3 = (23.0, 32.0, 26.0)
    rv_radii: Vec3 = (11.0, 12.0, 13.0)
    la_center: Vec3 = (38.0, 36.0, 47.0)
    la_radius: float = 7.0
    ra_center: Vec3 = (22.0, 36.0, 45.0)
    ra_radius: float = 7.0
    aorta_axis: Tuple[float, float] = (36.0, 23.0)
    aorta_radius: float = 3.5
    aorta_z: Tuple[float, float] = (36.0, 62.0)
    pulmonary_axis: Tuple[float, float] = (25.0, 21.0)
    pulmonary_radius: float = 3.5
    pulmonary_z: Tuple[float, float] = (36.0, 62.0)

    def __post_init__(self) -> None:
        radii = (
            self.lv_radii
            + self.myo_radii
            + self.rv_radii
            + (self.la_radius, self.ra_radius)
            + (self.aorta_radius, self.pulmonary_radius)
        )
        if min(radii) <= 0:
            raise InvalidConfigValue('structures', "all radii must be positive")
        if any(p >= o for p, o in zip(self.lv_radii, self.myo_radii)):
            raise InvalidConfigValue(
                'structures.lv_radii',
                "the LV pool must be smaller than the myocardium on every axis",
            )
        for name in ('aorta_z', 'pulmonary_z'):
            low, high = getattr(self, name)
            if low >= high:
                raise InvalidConfigValue(
                    f'structures.{name}', "expected increasing bounds"
                )

    def jittered(self, scale: float, shift: Vec3) -> StructureGeometry:
        """Scale every radius by `scale` and move every shape by `shift`."""

        def _move(p: Vec3) -> Vec3:
            return tuple(a + b for a, b in zip(p, shift))

        def _grow(r: Vec3) -> Vec3:
            return tuple(a * scale for a in r)

        return dataclasses.replace(
            self,
            lv_center=_move(self.lv_center),
            lv_radii=_grow(self.lv_radii),
            myo_radii=_grow(self.myo_radii),
            rv_center=_move(self.rv_center),
            rv_radii=_grow(self.rv_radii),
            la_center=_move(self.la_center),
            la_radius=self.la_radius * scale,
            ra_center=_move(self.ra_center),
            ra_radius=self.ra_radius * scale,
            aorta_axis=_move(self.aorta_axis + (0.0,))[:2],
            aorta_radius=self.aorta_radius * scale,
            aorta_z=tuple(z + shift[2] for z in self.aorta_z),
            pulmonary_axis=_move(self.pulmonary_axis + (0.0,))[:2],
            pulmonary_radius=self.pulmonary_radius * scale,
            pulmonary_z=tuple(z + shift[2] for z in self.pulmonary_z),
        )


@dataclasses.dataclass(frozen=True)
class PhantomConfig:
    """Configuration of a phantom cohort.

    :param shape: The grid of every frame.
    :param spacing: The voxel spacing in mm.
    :param frames: The number of frames ``T`` per cardiac cycle.
    :param seed: The root seed of all noise and jitter streams.
    :param contraction_amplitude: Peak fractional shrinkage ``A`` of the
        ventricular cavities, in ``[0, 0.4]``.
    :param noise_sigma_hu: Std of the additive Gaussian intensity noise.
    :param catheter: Whether to draw a bright catheter through the LV pool.
    :param studies: Number of (non-manual) subjects.
    :param manual_studies: Number of extra subjects flagged as manually
        labelled.
    :param subject_jitter: Relative per-subject variation of sizes and
        positions.
    :param geometry: The baseline shapes.
    """

    shape: GridShape = GridShape(64, 64, 64)
    spacing: Spacing = Spacing(1.0, 1.0, 1.0)
    frames: int = 10
    seed: int = 0
    contraction_amplitude: float = 0.25
    noise_sigma_hu: float = 20.0
    catheter: bool = False
    studies: int = 8
    manual_studies: int = 0
    subject_jitter: float = 0.05
    geometry: StructureGeometry = StructureGeometry()

    def __post_init__(self) -> None:
        if self.frames < 1:
            raise InvalidConfigValue('phantom.frames', "must be at least 1")
        if not 0.0 <= self.contraction_amplitude <= 0.4:
            raise InvalidConfigValue(
                'phantom.contraction_amplitude', "must be in [0, 0.4]"
            )
        if self.noise_sigma_hu < 0:
            raise InvalidConfigValue(
                'phantom.noise_sigma_hu', "must be non-negative"
            )
        if self.studies < 0 or self.manual_studies < 0:
            raise InvalidConfigValue(
                'phantom.studies', "study counts must be non-negative"
            )
        if not 0.0 <= self.subject_jitter < 0.5:
            raise InvalidConfigValue(
                'phantom.subject_jitter', "must be in [0, 0.5)"
            )
        if self.seed < 0:
            raise InvalidConfigValue('phantom.seed', "must be non-negative")


def contraction_factor(t: int, frames: int, amplitude: float) -> float:
    """Cavity scale ``c(t)``; 1 at ``t = 0``, ``1 - A`` at mid-cycle."""
    return 1.0 - amplitude * (1.0 - math.cos(2.0 * math.pi * t / frames)) / 2.0


def myocardium_factor(c: float, geometry: StructureGeometry) -> float:
    """Outer-shell scale keeping the myocardial volume constant.

    Solves ``f^3 prod(myo) - c^3 prod(lv) = prod(myo) - prod(lv)``.
    """
    ratio = np.prod(geometry.lv_radii) / np.prod(geometry.myo_radii)
    return float(np.cbrt(1.0 - (1.0 - c**3) * ratio))


def _check_inside(
    name: str, center: Vec3, radii: Vec3, extent: Vec3
) -> None:
    for axis, (c, r, e) in enumerate(zip(center, radii, extent)):
        if c - r < 0 or c + r > e:
            raise PhantomGeometryError(
                f"The {name} overflows the grid along axis "
                f"{'xyz'[axis]}: [{c - r:.2f}, {c + r:.2f}] not in "
                f"[0, {e:.2f}] mm"
            )


def check_geometry(
    geometry: StructureGeometry, shape: GridShape, spacing: Spacing
) -> None:
    """Raise :class:`PhantomGeometryError` if a shape leaves the grid."""
    extent = (
        (shape.nx - 1) * spacing.dx,
        (shape.ny - 1) * spacing.dy,
        (shape.nz - 1) * spacing.dz,
    )
    _check_inside(
        'LV myocardium', geometry.lv_center, geometry.myo_radii, extent
    )
    _check_inside('RV', geometry.rv_center, geometry.rv_radii, extent)
    _check_inside('LA', geometry.la_center, (geometry.la_radius,) * 3, extent)
    _check_inside('RA', geometry.ra_center, (geometry.ra_radius,) * 3, extent)
    for name, axis, radius, (z0, z1) in (
        ('aorta', geometry.aorta_axis, geometry.aorta_radius, geometry.aorta_z),
        (
            'pulmonary artery',
            geometry.pulmonary_axis,
            geometry.pulmonary_radius,
            geometry.pulmonary_z,
        ),
    ):
        half_height = (z1 - z0) / 2.0
        _check_inside(
            name,
            (axis[0], axis[1], z0 + half_height),
            (radius, radius, half_height),
            extent,
        )


class _Coordinates:
    """Voxel-centre coordinates in mm, broadcastable to ``(nz, ny, nx)``."""

    def __init__(self, shape: GridShape, spacing: Spacing) -> None:
        self.z = (np.arange(shape.nz) * spacing.dz)[:, None, None]
        self.y = (np.arange(shape.ny) * spacing.dy)[None, :, None]
        self.x = (np.arange(shape.nx) * spacing.dx)[None, None, :]

    def ellipsoid(self, center: Vec3, radii: Vec3) -> np.ndarray:
        """Implicit value, below 1 inside the ellipsoid."""
        return (
            ((self.x - center[0]) / radii[0]) ** 2
            + ((self.y - center[1]) / radii[1]) ** 2
            + ((self.z - center[2]) / radii[2]) ** 2
        )

    def cylinder(
        self,
        axis: Tuple[float, float],
        radius: float,
        z_range: Tuple[float, float],
    ) -> np.ndarray:
        radial = (self.x - axis[0]) ** 2 + (self.y - axis[1]) ** 2
        inside = (self.z >= z_range[0]) & (self.z <= z_range[1])
        return (radial <= radius**2) & inside

    def axis_distance(self, axis: Tuple[float, float]) -> np.ndarray:
        return np.sqrt((self.x - axis[0]) ** 2 + (self.y - axis[1]) ** 2)


def _structure_masks(
    coords: _Coordinates, geometry: StructureGeometry, c: float
) -> Dict[StructureId, np.ndarray]:
    f = myocardium_factor(c, geometry)
    pool = coords.ellipsoid(
        geometry.lv_center, tuple(r * c for r in geometry.lv_radii)
    ) < 1.0
    outer = coords.ellipsoid(
        geometry.lv_center, tuple(r * f for r in geometry.myo_radii)
    ) <= 1.0
    rv = coords.ellipsoid(
        geometry.rv_center, tuple(r * c for r in geometry.rv_radii)
    ) <= 1.0
    return {
        StructureId.LV_MYO: outer & ~pool,
        StructureId.LV: pool,
        StructureId.RV: rv & ~outer,
        StructureId.LA: coords.ellipsoid(
            geometry.la_center, (geometry.la_radius,) * 3
        ) <= 1.0,
        StructureId.RA: coords.ellipsoid(
            geometry.ra_center, (geometry.ra_radius,) * 3
        ) <= 1.0,
        StructureId.AORTA: coords.cylinder(
            geometry.aorta_axis, geometry.aorta_radius, geometry.aorta_z
        ),
        StructureId.PULMONARY_ARTERY: coords.cylinder(
            geometry.pulmonary_axis,
            geometry.pulmonary_radius,
            geometry.pulmonary_z,
        ),
    }


def paint_by_precedence(
    masks: Dict[StructureId, np.ndarray], shape: Tuple[int, ...]
) -> np.ndarray:
    """Combine structure masks into one label array.

    Lower-precedence structures are painted first so that higher-precedence
    ones win on overlapping voxels.
    """
    labels = np.zeros(shape, dtype=np.uint8)
    for s in reversed(PRECEDENCE):
        if s in masks:
            labels[masks[s]] = int(s)
    return labels


def _single_components(labels: np.ndarray) -> np.ndarray:
    # Clipping by higher-precedence shapes can leave a few detached voxels;
    # the phantom keeps every structure as one 26-connected piece.
    for s in PRECEDENCE:
        mask = labels == int(s)
        stray = mask & ~largest_component_mask(mask)
        labels[stray] = int(StructureId.BACKGROUND)
    return labels


def phantom_labels(
    geometry: StructureGeometry,
    shape: GridShape,
    spacing: Spacing,
    c: float,
) -> np.ndarray:
    """The ground-truth label array for cavity scale `c`."""
    coords = _Coordinates(shape, spacing)
    labels = paint_by_precedence(
        _structure_masks(coords, geometry, c), shape.zyx
    )
    return _single_components(labels)


def phantom_intensities(
    labels: np.ndarray,
    geometry: StructureGeometry,
    cfg: PhantomConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    """Piecewise-constant HU values plus Gaussian noise (and catheter)."""
    values = np.full(labels.shape, BACKGROUND_HU, dtype=np.float64)
    values[labels == int(StructureId.LV_MYO)] = MYOCARDIUM_HU
    blood = (labels != int(StructureId.BACKGROUND)) & (
        labels != int(StructureId.LV_MYO)
    )
    values[blood] = BLOOD_HU
    if cfg.catheter:
        coords = _Coordinates(cfg.shape, cfg.spacing)
        radius = max(cfg.spacing.dx, cfg.spacing.dy)
        line = coords.axis_distance(geometry.lv_center[:2]) <= radius
        values[line & (labels == int(StructureId.LV))] = CATHETER_HU
    if cfg.noise_sigma_hu > 0:
        values += rng.normal(0.0, cfg.noise_sigma_hu, size=labels.shape)
    return values.astype(np.float32)


def subject_geometry(cfg: PhantomConfig, subject_id: str) -> StructureGeometry:
    """The baseline geometry jittered by the subject's own seed stream."""
    if cfg.subject_jitter == 0:
        return cfg.geometry
    rng = substream(cfg.seed, subject_id, 'geometry')
    j = cfg.subject_jitter
    scale = 1.0 + rng.uniform(-j, j)
    shift = tuple(rng.uniform(-j, j, size=3) * 10.0)
    return cfg.geometry.jittered(scale, shift)


def generate_phantom(
    cfg: PhantomConfig,
    subject_id: str = 'subject_000',
    is_manual: bool = False,
    threads: Optional[int] = 1,
) -> CineStudy:
    """Generate one subject's 4D phantom, labelled with its ground truth.

    Frame ``t`` draws its noise from the stream ``(seed, subject_id, t)``,
    so frames can be generated independently and in any order.

    :raises PhantomGeometryError: If a structure does not fit in the grid.
    """
    geometry = subject_geometry(cfg, subject_id)
    check_geometry(geometry, cfg.shape, cfg.spacing)

    def _frame(t: int) -> Tuple[ScalarVolume, LabelVolume]:
        c = contraction_factor(t, cfg.frames, cfg.contraction_amplitude)
        labels = phantom_labels(geometry, cfg.shape, cfg.spacing, c)
        rng = substream(cfg.seed, subject_id, t)
        values = phantom_intensities(labels, geometry, cfg, rng)
        return (
            ScalarVolume(cfg.shape, cfg.spacing, values),
            LabelVolume(cfg.shape, cfg.spacing, labels),
        )

    frames = ordered_map(_frame, range(cfg.frames), threads)
    logger.info("Generated phantom '%s' (%d frames)", subject_id, cfg.frames)
    return CineStudy(subject_id, tuple(frames), is_manual=is_manual)


def subject_ids(cfg: PhantomConfig) -> List[Tuple[str, bool]]:
    """``(subject_id, is_manual)`` of every subject of the cohort."""
    ids = [(f'subject_{i:03d}', False) for i in range(cfg.studies)]
    ids += [(f'manual_{i:03d}', True) for i in range(cfg.manual_studies)]
    return ids


def generate_cohort(
    cfg: PhantomConfig, threads: Optional[int] = 1
) -> List[CineStudy]:
    """Every subject of the cohort, labelled with ground truth."""
    return [
        generate_phantom(cfg, subject_id, is_manual, threads)
        for subject_id, is_manual in subject_ids(cfg)
    ]
