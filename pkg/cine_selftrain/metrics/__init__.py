"""Per-structure evaluation metrics.

Overlap (Dice), surface distances (HD95, ASSD) built on an exact Euclidean
distance transform, and the geometric statistics (volume, surface area,
connected components) used for plausibility checks.
"""

from .distance import euclidean_distance_transform, squared_distance_transform
from .evaluation import (
    FrameMetrics,
    MetricSummary,
    evaluate_frame,
    evaluate_studies,
    summarize,
)
from .morphology import (
    ComponentReport,
    connected_components,
    keep_largest_component,
    keep_largest_components,
    structure_surface_area_mm2,
    structure_volume_mm3,
)
from .overlap import OverlapCounts, dice, overlap_counts
from .surface import (
    SurfaceDistanceSet,
    assd,
    extract_surface,
    hd95,
    surface_distances,
)

__all__ = [
    'ComponentReport',
    'FrameMetrics',
    'MetricSummary',
    'OverlapCounts',
    'SurfaceDistanceSet',
    'assd',
    'connected_components',
    'dice',
    'euclidean_distance_transform',
    'evaluate_frame',
    'evaluate_studies',
    'extract_surface',
    'hd95',
    'keep_largest_component',
    'keep_largest_components',
    'overlap_counts',
    'squared_distance_transform',
    'structure_surface_area_mm2',
    'structure_volume_mm3',
    'summarize',
    'surface_distances',
]
