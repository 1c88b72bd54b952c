"""Random training crops, inference grids, and overlap-averaged reassembly."""

from __future__ import annotations

from itertools import product
from typing import Sequence

import numpy as np


def _as_triple(value: int | Sequence[int], name: str) -> tuple[int, int, int]:
    if isinstance(value, (int, np.integer)):
        return (int(value),) * 3
    value = tuple(int(v) for v in value)
    if len(value) != 3:
        raise ValueError(f"{name} must have 3 components, got {value}")
    return value  # type: ignore[return-value]


def random_corner(
    shape: Sequence[int],
    size: int | Sequence[int],
    rng: np.random.Generator,
    foreground: np.ndarray | None = None,
    foreground_prob: float = 0.0,
) -> tuple[int, int, int]:
    """Uniform corner, or, with ``foreground_prob``, a corner centering a random foreground voxel."""
    size = _as_triple(size, "size")
    shape = tuple(int(s) for s in shape)
    if any(p > s for p, s in zip(size, shape)):
        raise ValueError(f"patch size {size} exceeds volume shape {shape}")
    if foreground is not None and foreground_prob > 0 and rng.random() < foreground_prob:
        idx = np.flatnonzero(foreground)
        if idx.size:
            center = np.unravel_index(idx[rng.integers(idx.size)], shape)
            return tuple(  # type: ignore[return-value]
                int(min(max(c - p // 2, 0), s - p)) for c, p, s in zip(center, size, shape)
            )
    return tuple(int(rng.integers(0, s - p + 1)) for p, s in zip(size, shape))  # type: ignore[return-value]


def crop(array: np.ndarray, corner: Sequence[int], size: Sequence[int]) -> np.ndarray:
    """Crop the trailing three axes."""
    sl = tuple(slice(c, c + p) for c, p in zip(corner, size))
    return array[(Ellipsis, *sl)]


def sample_patch(
    images: np.ndarray,
    labels: np.ndarray,
    size: int | Sequence[int],
    rng: np.random.Generator,
    foreground_prob: float = 0.0,
) -> tuple[np.ndarray, np.ndarray, tuple[int, int, int]]:
    """Crop images (C, X, Y, Z) and labels (X, Y, Z) at the same random corner."""
    size = _as_triple(size, "size")
    if images.shape[1:] != labels.shape:
        raise ValueError(f"image shape {images.shape[1:]} and label shape {labels.shape} differ")
    fg = labels > 0 if foreground_prob > 0 else None
    corner = random_corner(labels.shape, size, rng, fg, foreground_prob)
    return crop(images, corner, size), crop(labels, corner, size), corner


def axis_starts(length: int, size: int, stride: int) -> list[int]:
    starts = list(range(0, length - size + 1, stride))
    if starts[-1] + size < length:
        starts.append(length - size)
    return starts


def grid_patches(
    volume_shape: Sequence[int], size: int | Sequence[int], stride: int | Sequence[int]
) -> list[tuple[int, int, int]]:
    """Corners of a covering grid; the last corner on each axis is clamped to end at the boundary."""
    size = _as_triple(size, "size")
    stride = _as_triple(stride, "stride")
    shape = tuple(int(s) for s in volume_shape)
    for axis, (n, p, s) in enumerate(zip(shape, size, stride)):
        if not 0 < s <= p <= n:
            raise ValueError(f"need 0 < stride <= size <= shape on axis {axis}, got stride={s} size={p} shape={n}")
    per_axis = [axis_starts(n, p, s) for n, p, s in zip(shape, size, stride)]
    return [tuple(c) for c in product(*per_axis)]  # type: ignore[misc]


def extract(volume: np.ndarray, corners: Sequence[Sequence[int]], size: int | Sequence[int]) -> list[np.ndarray]:
    size = _as_triple(size, "size")
    return [crop(volume, c, size) for c in corners]


def assemble(
    patch_values: Sequence[np.ndarray],
    corners: Sequence[Sequence[int]],
    volume_shape: Sequence[int],
) -> np.ndarray:
    """Average overlapping patches (sum / count) into a volume of ``volume_shape``.

    Leading axes (e.g. channels) are carried through. Accumulation is float64,
    so reassembling float32 patches cut from one volume reproduces it exactly.
    """
    if len(patch_values) != len(corners):
        raise ValueError(f"{len(patch_values)} patches but {len(corners)} corners")
    if not patch_values:
        raise ValueError("no patches to assemble")
    spatial = tuple(int(s) for s in volume_shape)
    lead = patch_values[0].shape[:-3]
    total = np.zeros(lead + spatial, dtype=np.float64)
    count = np.zeros(spatial, dtype=np.int64)
    for patch, corner in zip(patch_values, corners):
        sl = tuple(slice(c, c + p) for c, p in zip(corner, patch.shape[-3:]))
        if any(s.stop > n for s, n in zip(sl, spatial)):
            raise ValueError(f"patch at {tuple(corner)} with shape {patch.shape[-3:]} overruns {spatial}")
        total[(Ellipsis, *sl)] += patch
        count[sl] += 1
    if np.any(count == 0):
        missing = np.argwhere(count == 0)[0]
        raise ValueError(f"voxel {tuple(int(m) for m in missing)} is not covered by any patch")
    out = total / count
    return out.astype(np.result_type(patch_values[0].dtype, np.float32), copy=False)


def coverage_count(volume_shape: Sequence[int], corners: Sequence[Sequence[int]], size: int | Sequence[int]) -> np.ndarray:
    size = _as_triple(size, "size")
    count = np.zeros(tuple(volume_shape), dtype=np.int64)
    for corner in corners:
        count[tuple(slice(c, c + p) for c, p in zip(corner, size))] += 1
    return count
