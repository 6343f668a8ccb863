from importlib.metadata import PackageNotFoundError, version

from cine_selftrain.foundation import (
    CorruptionConfig,
    FoundationSimulator,
    FrameContext,
    SegmenterModel,
    corrupt,
    simulate_foundation,
)
from cine_selftrain.grid import (
    CineStudy,
    GridShape,
    LabelVolume,
    ScalarVolume,
    Spacing,
    StructureId,
)
from cine_selftrain.phantom import PhantomConfig, generate_phantom
from cine_selftrain.selftrain import (
    IterationReport,
    SelfTrainConfig,
    SelfTrainMode,
    run_self_training,
)
from cine_selftrain.student import StudentModel, TrainConfig

try:
    __version__ = version("cine_selftrain")
except PackageNotFoundError:
    __version__ = "0.0.0"

__all__ = [
    '__version__',
    'CineStudy',
    'CorruptionConfig',
    'FoundationSimulator',
    'FrameContext',
    'GridShape',
    'IterationReport',
    'LabelVolume',
    'PhantomConfig',
    'ScalarVolume',
    'SegmenterModel',
    'SelfTrainConfig',
    'SelfTrainMode',
    'Spacing',
    'StructureId',
    'StudentModel',
    'TrainConfig',
    'corrupt',
    'generate_phantom',
    'run_self_training',
    'simulate_foundation',
]
