"""Random flips, in-plane rotation and Gaussian blur for training patches.

Images are (C, X, Y, Z); labels are (X, Y, Z). Spatial transforms act on both
identically. Labels are only ever resampled with nearest neighbour, so no new
label values can appear.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage


@dataclass
class AugmentConfig:
    # flip probability per spatial axis; axes 0 and 1 span the axial plane
    p_flip_axis: tuple[float, float, float] = (0.5, 0.5, 0.0)
    p_rotate: float = 0.5
    rotate_max_deg: float = 10.0
    rotate_plane: tuple[int, int] = (0, 1)
    p_blur: float = 0.2
    blur_sigma_range: tuple[float, float] = (0.5, 1.0)

    def __post_init__(self) -> None:
        self.p_flip_axis = tuple(float(p) for p in self.p_flip_axis)  # type: ignore[assignment]
        self.rotate_plane = tuple(int(a) for a in self.rotate_plane)  # type: ignore[assignment]
        self.blur_sigma_range = tuple(float(s) for s in self.blur_sigma_range)  # type: ignore[assignment]
        probs = (*self.p_flip_axis, self.p_rotate, self.p_blur)
        if len(self.p_flip_axis) != 3 or not all(0.0 <= p <= 1.0 for p in probs):
            raise ValueError(f"probabilities must lie in [0, 1], got {probs}")
        if not 0.0 < self.rotate_max_deg <= 180.0:
            raise ValueError(f"rotate_max_deg must be in (0, 180], got {self.rotate_max_deg}")
        lo, hi = self.blur_sigma_range
        if not 0.0 < lo <= hi:
            raise ValueError(f"blur sigmas must be positive and ordered, got {self.blur_sigma_range}")
        _check_plane(self.rotate_plane)

    @classmethod
    def disabled(cls) -> "AugmentConfig":
        return cls(p_flip_axis=(0.0, 0.0, 0.0), p_rotate=0.0, p_blur=0.0)


def _check_plane(plane) -> None:
    if len(plane) != 2 or plane[0] == plane[1] or not all(0 <= a <= 2 for a in plane):
        raise ValueError(f"rotation plane must be two distinct spatial axes in 0..2, got {plane}")


def flip(images: np.ndarray, labels: np.ndarray, axis: int) -> tuple[np.ndarray, np.ndarray]:
    return np.flip(images, axis=axis + 1).copy(), np.flip(labels, axis=axis).copy()


def rotate_volume(
    images: np.ndarray,
    labels: np.ndarray,
    angle_deg: float,
    plane: tuple[int, int] = (0, 1),
) -> tuple[np.ndarray, np.ndarray]:
    """Rotate about the volume center; images trilinear, labels nearest, zero fill."""
    if not np.isfinite(angle_deg):
        raise ValueError(f"rotation angle must be finite, got {angle_deg}")
    _check_plane(plane)
    if angle_deg == 0.0:
        return images.copy(), labels.copy()
    axes_img = (plane[0] + 1, plane[1] + 1)
    rot_images = ndimage.rotate(images, angle_deg, axes=axes_img, reshape=False, order=1, mode="constant", cval=0.0)
    rot_labels = ndimage.rotate(labels, angle_deg, axes=tuple(plane), reshape=False, order=0, mode="constant", cval=0)
    return rot_images.astype(images.dtype, copy=False), rot_labels.astype(labels.dtype, copy=False)


def gaussian_blur(images: np.ndarray, sigma: float) -> np.ndarray:
    out = np.empty_like(images)
    for c in range(images.shape[0]):
        out[c] = ndimage.gaussian_filter(images[c], sigma=sigma)
    return out


def augment(
    images: np.ndarray,
    labels: np.ndarray,
    cfg: AugmentConfig,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Flips, then rotation, then blur (images only), each drawn from ``rng``.

    Every random draw happens regardless of outcome so the stream consumption
    does not depend on which transforms fire.
    """
    if images.shape[1:] != labels.shape:
        raise ValueError(f"image shape {images.shape[1:]} and label shape {labels.shape} differ")
    flips = rng.random(3) < np.asarray(cfg.p_flip_axis)
    do_rotate = rng.random() < cfg.p_rotate
    angle = rng.uniform(-cfg.rotate_max_deg, cfg.rotate_max_deg)
    do_blur = rng.random() < cfg.p_blur
    sigma = rng.uniform(*cfg.blur_sigma_range)

    for axis in np.flatnonzero(flips):
        images, labels = flip(images, labels, int(axis))
    if do_rotate:
        images, labels = rotate_volume(images, labels, angle, cfg.rotate_plane)
    if do_blur:
        images = gaussian_blur(images, sigma)
    return images, labels
