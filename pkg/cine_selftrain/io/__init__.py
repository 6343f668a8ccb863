"""Persistence: study containers, NIfTI-1 ingestion and reports."""

from .container import read_dataset, read_study, write_dataset, write_study
from .nifti import read_nifti1

__all__ = [
    'read_dataset',
    'read_nifti1',
    'read_study',
    'write_dataset',
    'write_study',
]
