"""Phantom cases: nested ellipsoidal tumors rendered into four pseudo-modalities.

Each case is a skull-stripped-looking brain (an ellipsoid of unit-intensity
tissue, zero outside) containing one lesion made of three concentric
ellipsoids: edema shell (2), necrotic core shell (1) and enhancing center (4).
Flair gives the strongest whole-tumor contrast and T1ce the strongest
core/enhancing contrast.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from cascadeseg import _poly
from cascadeseg.core_types import MODALITIES, LabelMap, ModalityStack

# Mean intensity per (modality, tissue); brain tissue is 1.0 in every channel.
TISSUE_INTENSITY: dict[str, dict[int, float]] = {
    "flair": {0: 1.0, 2: 2.5, 1: 1.5, 4: 1.5},
    "t1": {0: 1.0, 2: 0.8, 1: 0.6, 4: 0.9},
    "t1ce": {0: 1.0, 2: 1.1, 1: 1.8, 4: 3.0},
    "t2": {0: 1.0, 2: 1.8, 1: 1.6, 4: 1.3},
}

BRAIN_RADIUS_FRACTION = 0.45
MIN_EXTENT = 32


@dataclass
class BiasFieldSpec:
    """Smooth multiplicative field ``1 + amplitude * p`` with ``p`` a polynomial
    rescaled to zero mean and unit peak magnitude over the volume."""

    coefficients: np.ndarray
    degree: int = 2
    amplitude: float = 0.3

    def __post_init__(self) -> None:
        self.coefficients = np.asarray(self.coefficients, dtype=float)
        if not 0 <= self.degree <= 3:
            raise ValueError(f"bias degree must be in [0, 3], got {self.degree}")
        if not 0.0 <= self.amplitude <= 0.5:
            raise ValueError(f"bias amplitude must be in [0, 0.5], got {self.amplitude}")
        n_terms = len(_poly.monomial_exponents(self.degree))
        if self.coefficients.shape != (n_terms,):
            raise ValueError(f"degree {self.degree} needs {n_terms} coefficients, got {self.coefficients.shape}")

    @classmethod
    def random(cls, degree: int, amplitude: float, rng: np.random.Generator) -> "BiasFieldSpec":
        n_terms = len(_poly.monomial_exponents(degree))
        return cls(rng.standard_normal(n_terms), degree, amplitude)

    def field(self, shape: tuple[int, int, int]) -> np.ndarray:
        if self.amplitude == 0.0:
            return np.ones(shape)
        poly = _poly.evaluate(self.coefficients, _poly.monomial_exponents(self.degree), shape)
        poly -= poly.mean()
        peak = np.abs(poly).max()
        if peak == 0.0:
            return np.ones(shape)
        return 1.0 + self.amplitude * poly / peak


@dataclass
class PhantomParams:
    volume_shape: tuple[int, int, int] = (96, 96, 96)
    # WT semi-axes as fractions of each axis extent.
    wt_radius_range: tuple[float, float] = (0.16, 0.26)
    # TC and ET semi-axes as fractions of the enclosing region's semi-axes.
    tc_scale_range: tuple[float, float] = (0.55, 0.8)
    et_scale_range: tuple[float, float] = (0.5, 0.75)
    noise_sigma: float = 0.05
    bias: Optional[BiasFieldSpec] = None
    seed: int = 0
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    case_id: str = field(default="")

    def validate(self) -> None:
        if len(self.volume_shape) != 3 or min(self.volume_shape) < MIN_EXTENT:
            raise ValueError(f"volume_shape components must be >= {MIN_EXTENT}, got {self.volume_shape}")
        for name in ("tc_scale_range", "et_scale_range"):
            lo, hi = getattr(self, name)
            if not 0.0 < lo <= hi < 1.0:
                raise ValueError(f"{name} must lie inside (0, 1), got {(lo, hi)}")
        lo, hi = self.wt_radius_range
        if not 0.0 < lo <= hi:
            raise ValueError(f"wt_radius_range must be positive and ordered, got {(lo, hi)}")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")


def _ellipsoid(shape, center, radii) -> np.ndarray:
    grids = np.ogrid[tuple(slice(0, n) for n in shape)]
    dist = sum(((g - c) / r) ** 2 for g, c, r in zip(grids, center, radii))
    return dist <= 1.0


def inject_bias_field(volume: np.ndarray, spec: BiasFieldSpec) -> np.ndarray:
    if spec.amplitude == 0.0:
        return np.array(volume, copy=True)
    return volume * spec.field(volume.shape)


def generate_case(params: PhantomParams) -> tuple[ModalityStack, LabelMap]:
    """Render one phantom; a pure function of ``params``."""
    params.validate()
    rng = np.random.default_rng(params.seed)
    shape = tuple(int(n) for n in params.volume_shape)
    extent = np.asarray(shape, dtype=float)

    wt_r = rng.uniform(*params.wt_radius_range, size=3) * extent
    tc_r = wt_r * rng.uniform(*params.tc_scale_range, size=3)
    et_r = tc_r * rng.uniform(*params.et_scale_range, size=3)
    if np.any(2 * wt_r + 2 > extent):
        raise ValueError(f"whole-tumor ellipsoid with semi-axes {np.round(wt_r, 1)} cannot fit in {shape}")

    mid = (extent - 1) / 2
    brain_r = BRAIN_RADIUS_FRACTION * extent
    # keep the lesion inside the volume with a one-voxel margin, and its center inside the brain
    slack = np.minimum(np.maximum(brain_r - wt_r, 0.0) * 0.5, mid - wt_r - 1)
    center = mid + rng.uniform(-1.0, 1.0, size=3) * np.maximum(slack, 0.0)

    brain = _ellipsoid(shape, mid, brain_r)
    wt = _ellipsoid(shape, center, wt_r)
    tc = _ellipsoid(shape, center, tc_r) & wt
    et = _ellipsoid(shape, center, et_r) & tc
    support = brain | wt

    labels = np.zeros(shape, dtype=np.uint8)
    labels[wt] = 2
    labels[tc] = 1
    labels[et] = 4

    field_ = params.bias.field(shape) if params.bias is not None else None
    channels = []
    for mod in MODALITIES:
        table = TISSUE_INTENSITY[mod]
        img = np.zeros(shape)
        img[support] = table[0]
        for value in (2, 1, 4):
            img[labels == value] = table[value]
        if field_ is not None:
            img = img * field_
        if params.noise_sigma > 0:
            noise = rng.standard_normal(shape) * params.noise_sigma
            img[support] += noise[support]
        img[support] = np.maximum(img[support], 1e-2)
        img[~support] = 0.0
        channels.append(img.astype(np.float32))

    case_id = params.case_id or f"phantom_{params.seed:04d}"
    stack = ModalityStack(np.stack(channels), params.spacing, case_id)
    return stack, LabelMap(labels, params.spacing)


def region_contrast(stack: ModalityStack, labels: LabelMap, label_values: tuple[int, ...]) -> dict[str, float]:
    """|mean(region) - mean(brain tissue)| per channel; brain tissue = nonzero label-0 voxels."""
    region = np.isin(labels.labels, label_values)
    tissue = (labels.labels == 0) & (stack.data[0] != 0)
    return {
        mod: float(abs(stack.data[i][region].mean() - stack.data[i][tissue].mean()))
        for i, mod in enumerate(MODALITIES)
    }
