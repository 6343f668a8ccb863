"""Exact Euclidean distance transform.

The transform is separable: squared distances are propagated one axis at a
time, and along each axis the exact 1D transform of a sampled function
``f`` is the lower envelope of the parabolas ``(x - x_q)^2 + f(q)``. Every
line along an axis is processed at once, with numpy arrays holding the
envelope state (parabola vertices ``v``, envelope breakpoints ``z`` and the
envelope size ``k``) of all lines.

Anisotropic spacing is folded in by placing samples at ``x_q = q * step``.
"""

import numpy as np

from cine_selftrain.grid import Spacing


def _lower_envelope(f: np.ndarray, step: float) -> np.ndarray:
    """1D squared distance transform of every row of `f`.

    :param f: ``(lines, n)`` array of sampled squared distances. ``inf``
        marks samples with no source.
    :param step: The sample spacing in mm.
    :return: ``d[l, p] = min_q (x_p - x_q)^2 + f[l, q]``.
    """
    lines, n = f.shape
    pos = np.arange(n, dtype=np.float64) * step
    rows = np.arange(lines)
    v = np.zeros((lines, n), dtype=np.intp)
    z = np.full((lines, n + 1), np.inf)
    k = np.full(lines, -1, dtype=np.intp)

    for q in range(n):
        fq = f[:, q]
        active = np.isfinite(fq)
        if not active.any():
            continue
        xq = pos[q]
        while True:
            kk = np.maximum(k, 0)
            vk = v[rows, kk]
            xv = pos[vk]
            with np.errstate(invalid='ignore', divide='ignore'):
                s = ((fq + xq * xq) - (f[rows, vk] + xv * xv)) / (
                    2.0 * (xq - xv)
                )
            pop = active & (k >= 0) & (s <= z[rows, kk])
            if not pop.any():
                break
            k[pop] -= 1
        s = np.where(k >= 0, s, -np.inf)
        grow = rows[active]
        k[grow] += 1
        v[grow, k[grow]] = q
        z[grow, k[grow]] = s[grow]
        z[grow, k[grow] + 1] = np.inf

    out = np.full((lines, n), np.inf)
    has_source = k >= 0
    k = np.zeros(lines, dtype=np.intp)
    for p in range(n):
        xp = pos[p]
        while True:
            advance = has_source & (z[rows, k + 1] < xp)
            if not advance.any():
                break
            k[advance] += 1
        vk = v[rows, k]
        d = (xp - pos[vk]) ** 2 + f[rows, vk]
        out[:, p] = np.where(has_source, d, np.inf)
    return out


def squared_distance_transform(
    mask: np.ndarray, spacing: Spacing
) -> np.ndarray:
    """Squared distance in mm^2 from every voxel to the nearest true voxel.

    :param mask: Boolean array shaped ``(nz, ny, nx)``.
    :param spacing: The voxel spacing.
    :return: Float64 array of the same shape; all ``inf`` if `mask` is empty.
    """
    mask = np.asarray(mask, dtype=bool)
    dist = np.where(mask, 0.0, np.inf)
    if not mask.any():
        return dist
    for axis, step in enumerate(spacing.zyx):
        moved = np.moveaxis(dist, axis, -1)
        flat = np.ascontiguousarray(moved).reshape(-1, moved.shape[-1])
        swept = _lower_envelope(flat, step).reshape(moved.shape)
        dist = np.moveaxis(swept, -1, axis)
    return np.ascontiguousarray(dist)


def euclidean_distance_transform(
    mask: np.ndarray, spacing: Spacing
) -> np.ndarray:
    """Exact Euclidean distance in mm to the nearest foreground voxel.

    Distances are measured between voxel centres with the anisotropic
    `spacing` respected. Foreground voxels get 0. If the mask is empty every
    voxel gets ``inf``.
    """
    return np.sqrt(squared_distance_transform(mask, spacing))
