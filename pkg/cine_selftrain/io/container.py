"""Native on-disk study container.

A study directory holds ``study.json`` and one pair of raw files per frame:
``frame_###.img`` (little-endian float32 intensities) and ``frame_###.lbl``
(uint8 labels), both in row-major ``(z, y, x)`` order. The manifest records
the grid, the manual flag and the SHA-256 of every file, all checked on
read.
"""

import json
import logging
import os
from typing import Any, Dict, List, Sequence

import numpy as np

from cine_selftrain.errors import (
    ContainerIntegrityError,
    InvalidVolume,
    LabelRangeError,
    MalformedManifestError,
    TruncatedFileError,
)
from cine_selftrain.grid import (
    NUM_CLASSES,
    CineStudy,
    GridShape,
    LabelVolume,
    ScalarVolume,
    Spacing,
)
from cine_selftrain.utils.hashing import sha256_bytes

logger = logging.getLogger(__name__)

MANIFEST_NAME = 'study.json'
CONTAINER_SCHEMA_VERSION = 1
IMAGE_DTYPE = np.dtype('<f4')
LABEL_DTYPE = np.dtype('u1')


def frame_file_names(t: int) -> Dict[str, str]:
    return {'image': f'frame_{t:03d}.img', 'labels': f'frame_{t:03d}.lbl'}


def write_study(study: CineStudy, path: str) -> None:
    """Write `study` as a container directory at `path`.

    The directory is created if needed; existing frame files are replaced.
    """
    os.makedirs(path, exist_ok=True)
    frames = []
    for t, (image, labels) in enumerate(study.frames):
        names = frame_file_names(t)
        image_bytes = image.values.astype(IMAGE_DTYPE).tobytes()
        label_bytes = labels.labels.astype(LABEL_DTYPE).tobytes()
        for name, data in (
            (names['image'], image_bytes),
            (names['labels'], label_bytes),
        ):
            with open(os.path.join(path, name), 'wb') as f:
                f.write(data)
        frames.append(
            {
                'image': names['image'],
                'labels': names['labels'],
                'image_sha256': sha256_bytes(image_bytes),
                'labels_sha256': sha256_bytes(label_bytes),
            }
        )
    manifest = {
        'schema_version': CONTAINER_SCHEMA_VERSION,
        'subject_id': study.subject_id,
        'num_frames': study.num_frames,
        'shape': [study.shape.nx, study.shape.ny, study.shape.nz],
        'spacing': [study.spacing.dx, study.spacing.dy, study.spacing.dz],
        'is_manual': study.is_manual,
        'frames': frames,
    }
    with open(os.path.join(path, MANIFEST_NAME), 'w') as f:
        json.dump(manifest, f, indent=2)
        f.write('\n')


def _load_manifest(path: str) -> Dict[str, Any]:
    manifest_path = os.path.join(path, MANIFEST_NAME)
    try:
        with open(manifest_path) as f:
            manifest = json.load(f)
    except FileNotFoundError:
        raise MalformedManifestError(manifest_path, "file not found") from None
    except json.JSONDecodeError as e:
        raise MalformedManifestError(manifest_path, str(e)) from e
    if not isinstance(manifest, dict):
        raise MalformedManifestError(manifest_path, "expected a JSON object")
    version = manifest.get('schema_version')
    if version != CONTAINER_SCHEMA_VERSION:
        raise MalformedManifestError(
            manifest_path, f"unsupported schema version {version!r}"
        )
    return manifest


def _read_checked(path: str, expected_size: int, expected_hash: str) -> bytes:
    try:
        with open(path, 'rb') as f:
            data = f.read()
    except FileNotFoundError:
        raise TruncatedFileError(path, expected_size, 0) from None
    if len(data) != expected_size:
        raise TruncatedFileError(path, expected_size, len(data))
    actual = sha256_bytes(data)
    if actual != expected_hash:
        raise ContainerIntegrityError(path, expected_hash, actual)
    return data


def read_study(path: str) -> CineStudy:
    """Read and verify the container at `path`.

    :raises MalformedManifestError: If ``study.json`` is missing, not valid
        JSON or lacks a required field.
    :raises TruncatedFileError: If a frame file has the wrong size.
    :raises ContainerIntegrityError: If a frame file's hash does not match.
    :raises LabelRangeError: If a label file holds a code above 7.
    """
    manifest = _load_manifest(path)
    manifest_path = os.path.join(path, MANIFEST_NAME)
    try:
        shape = GridShape(*(int(n) for n in manifest['shape']))
        spacing = Spacing(*(float(d) for d in manifest['spacing']))
        subject_id = str(manifest['subject_id'])
        is_manual = bool(manifest['is_manual'])
        entries = list(manifest['frames'])
        if len(entries) != int(manifest['num_frames']):
            raise ValueError(
                f"num_frames is {manifest['num_frames']} but "
                f"{len(entries)} frames are listed"
            )
        files = [
            (e['image'], e['image_sha256'], e['labels'], e['labels_sha256'])
            for e in entries
        ]
    except (KeyError, TypeError, ValueError, InvalidVolume) as e:
        raise MalformedManifestError(manifest_path, repr(e)) from e

    frames = []
    for image_name, image_hash, label_name, label_hash in files:
        image_path = os.path.join(path, image_name)
        label_path = os.path.join(path, label_name)
        image_data = _read_checked(
            image_path, shape.size * IMAGE_DTYPE.itemsize, image_hash
        )
        label_data = _read_checked(
            label_path, shape.size * LABEL_DTYPE.itemsize, label_hash
        )
        labels = np.frombuffer(label_data, dtype=LABEL_DTYPE)
        if labels.size and labels.max() >= NUM_CLASSES:
            raise LabelRangeError(int(labels.max()), source=label_path)
        frames.append(
            (
                ScalarVolume(
                    shape, spacing, np.frombuffer(image_data, IMAGE_DTYPE)
                ),
                LabelVolume(shape, spacing, labels),
            )
        )
    logger.debug("Read study '%s' from %s", subject_id, path)
    return CineStudy(subject_id, tuple(frames), is_manual=is_manual)


def is_study_dir(path: str) -> bool:
    return os.path.isfile(os.path.join(path, MANIFEST_NAME))


def read_dataset(path: str) -> List[CineStudy]:
    """Every study container directly under `path`, in sorted order.

    :raises FileNotFoundError: If `path` is not a directory.
    """
    if not os.path.isdir(path):
        raise FileNotFoundError(f"Dataset directory '{path}' does not exist")
    return [
        read_study(os.path.join(path, name))
        for name in sorted(os.listdir(path))
        if is_study_dir(os.path.join(path, name))
    ]


def write_dataset(studies: Sequence[CineStudy], path: str) -> None:
    """Write every study to ``path/<subject_id>``."""
    os.makedirs(path, exist_ok=True)
    for study in studies:
        write_study(study, os.path.join(path, study.subject_id))
