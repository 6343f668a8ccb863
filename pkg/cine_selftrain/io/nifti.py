"""Minimal reader for single-file, uncompressed NIfTI-1 volumes."""

from typing import Mapping, Optional, Tuple, Union

import numpy as np

from cine_selftrain.errors import (
    InvalidPixdim,
    LabelRangeError,
    NiftiMagicError,
    TruncatedFileError,
    UnsupportedDatatype,
    UnsupportedDimensions,
    UnsupportedNiftiForm,
)
from cine_selftrain.grid import (
    NUM_CLASSES,
    GridShape,
    LabelVolume,
    ScalarVolume,
    Spacing,
)

HEADER_SIZE = 348
MIN_VOX_OFFSET = 352

# Offsets in the comments; fields the reader ignores are kept as padding.
HEADER_DTD = [
    ('sizeof_hdr', 'i4'),  # 0
    ('unused_4', 'V36'),  # 4
    ('dim', 'i2', (8,)),  # 40
    ('intent', 'V14'),  # 56
    ('datatype', 'i2'),  # 70
    ('bitpix', 'i2'),  # 72
    ('slice_start', 'i2'),  # 74
    ('pixdim', 'f4', (8,)),  # 76
    ('vox_offset', 'f4'),  # 108
    ('scl_slope', 'f4'),  # 112
    ('scl_inter', 'f4'),  # 116
    ('unused_120', 'V224'),  # 120
    ('magic', 'S4'),  # 344
]
HEADER_DTYPE = np.dtype(HEADER_DTD)

#: NIfTI-1 datatype codes the reader accepts.
DATATYPES = {
    2: np.dtype('u1'),
    4: np.dtype('i2'),
    16: np.dtype('f4'),
}


def parse_header(data: bytes, path: str = '<bytes>') -> Tuple[np.void, str]:
    """Decode the 348-byte header.

    The byte order is the one under which ``sizeof_hdr`` reads 348, little
    endian if neither does.

    :return: The header record and its byte order, ``'<'`` or ``'>'``.
    :raises TruncatedFileError: If `data` is shorter than a header.
    :raises UnsupportedNiftiForm: For the two-file ``ni1`` magic.
    :raises NiftiMagicError: For any magic other than ``n+1``.
    """
    if len(data) < HEADER_SIZE:
        raise TruncatedFileError(path, HEADER_SIZE, len(data))
    byte_order = '<'
    for candidate in ('<', '>'):
        record = np.frombuffer(
            data, dtype=HEADER_DTYPE.newbyteorder(candidate), count=1
        )[0]
        if int(record['sizeof_hdr']) == HEADER_SIZE:
            byte_order = candidate
            break
    header = np.frombuffer(
        data, dtype=HEADER_DTYPE.newbyteorder(byte_order), count=1
    )[0]
    # numpy strips the trailing NUL of 'S4' fields.
    magic = bytes(header['magic'])
    if magic == b'ni1':
        raise UnsupportedNiftiForm()
    if magic != b'n+1':
        raise NiftiMagicError(bytes(data[344:348]))
    return header, byte_order


def read_nifti1(
    path: str,
    label_remap: Optional[Mapping[int, int]] = None,
    labels: bool = False,
) -> Union[ScalarVolume, LabelVolume]:
    """Read a 3D ``.nii`` file.

    :param path: The file to read.
    :param label_remap: Map from file codes to structure codes. Implies
        `labels`; codes missing from the map are kept as they are.
    :param labels: Return a :class:`LabelVolume` instead of intensities.
    :return: The volume, with the grid from ``dim[1..3]`` and the spacing in
        mm from ``pixdim[1..3]``. Values are scaled by
        ``scl_slope``/``scl_inter`` when the slope is non-zero.
    :raises NiftiMagicError: If the magic is not ``n+1``.
    :raises UnsupportedNiftiForm: For the two-file ``ni1`` form.
    :raises UnsupportedDatatype: For datatypes other than uint8, int16 and
        float32.
    :raises UnsupportedDimensions: If ``dim[0]`` is not 3.
    :raises InvalidPixdim: If a spacing is not strictly positive.
    :raises TruncatedFileError: If the file ends before the voxel data does.
    :raises LabelRangeError: In label mode, for codes outside 0..7.
    """
    with open(path, 'rb') as f:
        data = f.read()
    header, byte_order = parse_header(data, path)

    dim = [int(d) for d in header['dim']]
    if dim[0] != 3 or min(dim[1:4]) < 1:
        raise UnsupportedDimensions(dim[0])
    code = int(header['datatype'])
    if code not in DATATYPES:
        raise UnsupportedDatatype(code)
    pixdim = tuple(float(p) for p in header['pixdim'][1:4])
    if not all(np.isfinite(p) and p > 0 for p in pixdim):
        raise InvalidPixdim(pixdim)

    shape = GridShape(dim[1], dim[2], dim[3])
    dtype = DATATYPES[code].newbyteorder(byte_order)
    offset = max(int(header['vox_offset']), MIN_VOX_OFFSET)
    needed = offset + shape.size * dtype.itemsize
    if len(data) < needed:
        raise TruncatedFileError(path, needed, len(data))
    # NIfTI stores x fastest, which is row-major (z, y, x).
    values = np.frombuffer(data, dtype=dtype, count=shape.size, offset=offset)
    values = values.astype(np.float64)

    slope = float(header['scl_slope'])
    if slope != 0 and np.isfinite(slope):
        values = values * slope + float(header['scl_inter'])

    spacing = Spacing(*pixdim)
    if not (labels or label_remap is not None):
        return ScalarVolume(shape, spacing, values)

    codes = np.rint(values)
    fractional = codes != values
    if fractional.any():
        raise LabelRangeError(values[fractional][0], source=path)
    codes = codes.astype(np.int64)
    if label_remap:
        remapped = codes.copy()
        for source, target in label_remap.items():
            remapped[codes == int(source)] = int(target)
        codes = remapped
    if codes.size and (codes.min() < 0 or codes.max() >= NUM_CLASSES):
        bad = codes.min() if codes.min() < 0 else codes.max()
        raise LabelRangeError(int(bad), source=path)
    return LabelVolume(shape, spacing, codes.astype(np.uint8))
