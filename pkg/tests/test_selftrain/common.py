import dataclasses
from typing import Dict, List

from cine_selftrain.grid import CineStudy
from cine_selftrain.phantom import generate_cohort
from cine_selftrain.student import TrainConfig

from tests.common import SMALL_PHANTOM

#: Two pseudo-labelled subjects and one manual subject, three frames each.
COHORT_CFG = dataclasses.replace(
    SMALL_PHANTOM, frames=3, studies=2, manual_studies=1
)

#: A student that trains in well under a second.
FAST_TRAINING = TrainConfig(epochs=3, voxels_per_frame=300, batch_voxels=256)

_COHORT: List[CineStudy] = []


def cohort() -> List[CineStudy]:
    """The ground-truth cohort, generated once per test run."""
    if not _COHORT:
        _COHORT.extend(generate_cohort(COHORT_CFG))
    return list(_COHORT)


def truth_map() -> Dict[str, CineStudy]:
    return {s.subject_id: s for s in cohort()}
