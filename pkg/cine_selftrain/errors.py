"""Custom errors used in `cine_selftrain`.

The errors are grouped in three families which the command line maps onto its
exit codes: :class:`ConfigError` (usage), :class:`DataError` (data or file
format problems) and :class:`PipelineError` (training or self-training
failures).
"""

from typing import Iterable, Optional, Sequence, Tuple, Union


class CineSelftrainError(Exception):
    """Base class of every error raised by the toolkit."""


class ConfigError(CineSelftrainError):
    """Raised when the toolkit is configured or invoked incorrectly."""


class DataError(CineSelftrainError):
    """Raised when input data is missing, malformed or inconsistent."""


class PipelineError(CineSelftrainError):
    """Raised when training or the self-training loop fails."""


class InvalidConfigKeys(ConfigError):
    """Raised when a config file contains unknown sections or keys."""

    def __init__(self, keys: Iterable[str]) -> None:
        self.keys = sorted(keys)
        super().__init__(
            "Unknown configuration keys: " + ", ".join(self.keys)
        )


class InvalidConfigValue(ConfigError):
    """Raised when a configuration value is malformed or out of range."""

    def __init__(self, key: str, reason: str) -> None:
        self.key = key
        super().__init__(f"Invalid value for '{key}': {reason}")


class InvalidOperation(ConfigError):
    """Raised when an operation is not allowed in the current setting."""

    def __init__(self, message: str) -> None:
        super().__init__(message)


class GridMismatch(DataError):
    """Raised when two volumes that must share a grid do not."""

    __DEFAULT_MESSAGE = "Grid mismatch: {} vs {}"

    def __init__(
        self, left: object, right: object, message: str = __DEFAULT_MESSAGE
    ) -> None:
        super().__init__(message.format(left, right))


class InvalidVolume(DataError):
    """Raised when a volume violates its construction invariants."""


class LabelRangeError(DataError):
    """Raised when a label volume holds codes outside the structure set."""

    def __init__(
        self, value: Union[int, float], source: Optional[str] = None
    ) -> None:
        self.value = value
        where = f" in {source}" if source is not None else ""
        if float(value).is_integer():
            super().__init__(
                f"Label value {int(value)}{where} is outside the valid range "
                f"0..7"
            )
        else:
            super().__init__(
                f"Label value {value}{where} is not an integral structure code"
            )


class ContainerIntegrityError(DataError):
    """Raised when a study file does not match its manifest hash."""

    def __init__(self, path: str, expected: str, actual: str) -> None:
        super().__init__(
            f"Content hash mismatch for '{path}': manifest says {expected}, "
            f"file hashes to {actual}"
        )


class TruncatedFileError(DataError):
    """Raised when a raw frame file is shorter or longer than expected."""

    def __init__(self, path: str, expected: int, actual: int) -> None:
        super().__init__(
            f"File '{path}' has {actual} bytes, expected {expected}"
        )


class MalformedManifestError(DataError):
    """Raised when a JSON manifest cannot be parsed or is incomplete."""

    def __init__(self, path: str, reason: str) -> None:
        super().__init__(f"Malformed manifest '{path}': {reason}")


class NiftiFormatError(DataError):
    """Base class of NIfTI-1 ingestion errors."""


class NiftiMagicError(NiftiFormatError):
    """Raised when the NIfTI-1 magic string is not recognised."""

    def __init__(self, magic: bytes) -> None:
        super().__init__(f"Not a NIfTI-1 file (magic {magic!r})")


class UnsupportedNiftiForm(NiftiFormatError):
    """Raised for the two-file (``.hdr``/``.img``) NIfTI-1 form."""

    def __init__(self) -> None:
        super().__init__(
            "Two-file NIfTI-1 (magic 'ni1') is not supported, convert to a "
            "single '.nii' file"
        )


class UnsupportedDatatype(NiftiFormatError):
    """Raised when the NIfTI-1 datatype is not uint8, int16 or float32."""

    def __init__(self, code: int) -> None:
        super().__init__(f"Unsupported NIfTI-1 datatype code {code}")


class UnsupportedDimensions(NiftiFormatError):
    """Raised when the NIfTI-1 image is not three dimensional."""

    def __init__(self, ndim: int) -> None:
        super().__init__(f"Expected dim[0] == 3, found {ndim}")


class InvalidPixdim(NiftiFormatError):
    """Raised when a NIfTI-1 voxel spacing is not strictly positive."""

    def __init__(self, pixdim: Tuple[float, ...]) -> None:
        super().__init__(f"Voxel spacing must be positive, found {pixdim}")


class PhantomGeometryError(DataError):
    """Raised when a phantom structure does not fit inside the grid."""


class InsufficientData(DataError):
    """Raised when a statistic needs more samples than were given."""


class OutputDirectoryNotEmpty(DataError):
    """Raised when refusing to write into a non-empty output directory."""

    def __init__(self, path: str) -> None:
        super().__init__(
            f"Output directory '{path}' is not empty. Use --force to "
            f"overwrite it."
        )


class OutputFileExists(DataError):
    """Raised when refusing to replace an existing output file."""

    def __init__(self, path: str) -> None:
        super().__init__(
            f"Output file '{path}' already exists. Use --force to overwrite it."
        )


class DirectoryLocked(DataError):
    """Raised when another writer holds the lock on a directory."""

    def __init__(self, path: str) -> None:
        super().__init__(f"Directory '{path}' is locked by another writer")


class TrainingError(PipelineError):
    """Raised when a student model cannot be trained."""


class TrainingDiverged(TrainingError):
    """Raised when the training loss stops being finite."""

    def __init__(self, epoch: int, loss: float) -> None:
        self.epoch = epoch
        self.loss = loss
        super().__init__(
            f"Training diverged at epoch {epoch}: loss became {loss}"
        )


class FramePredictionError(PipelineError):
    """Raised when a segmenter fails on a specific frame."""

    def __init__(self, subject_id: str, frame_index: int, cause: str) -> None:
        self.subject_id = subject_id
        self.frame_index = frame_index
        super().__init__(
            f"Prediction failed for subject '{subject_id}', frame "
            f"{frame_index}: {cause}"
        )


class RoundFailed(PipelineError):
    """Raised when a self-training round fails; earlier reports survive."""

    def __init__(
        self, iteration: int, cause: Exception, reports: Sequence = ()
    ) -> None:
        self.iteration = iteration
        self.cause = cause
        self.reports = list(reports)
        super().__init__(f"Self-training iteration {iteration} failed: {cause}")
