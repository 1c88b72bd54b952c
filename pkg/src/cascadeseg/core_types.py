"""Volume and label data model.

Labels follow the BraTS convention: 0 background, 1 necrotic / non-enhancing
core, 2 edema, 4 enhancing tumor. The three evaluated regions are nested:
ET (4) inside TC (1, 4) inside WT (1, 2, 4).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

MODALITIES: tuple[str, ...] = ("flair", "t1", "t1ce", "t2")
LABEL_VALUES: tuple[int, ...] = (0, 1, 2, 4)
DEFAULT_SPACING: tuple[float, float, float] = (1.0, 1.0, 1.0)


class Region(str, enum.Enum):
    WT = "WT"
    TC = "TC"
    ET = "ET"


REGIONS: tuple[Region, ...] = (Region.WT, Region.TC, Region.ET)

_REGION_LABELS: dict[Region, tuple[int, ...]] = {
    Region.WT: (1, 2, 4),
    Region.TC: (1, 4),
    Region.ET: (4,),
}


def _check_spacing(spacing: Sequence[float]) -> tuple[float, float, float]:
    spacing = tuple(float(s) for s in spacing)
    if len(spacing) != 3:
        raise ValueError(f"spacing must have 3 components, got {len(spacing)}")
    if not all(np.isfinite(s) and s > 0 for s in spacing):
        raise ValueError(f"spacing components must be strictly positive, got {spacing}")
    return spacing  # type: ignore[return-value]


@dataclass
class ModalityStack:
    """Four co-registered MRI channels in ``MODALITIES`` order, shape (4, X, Y, Z)."""

    data: np.ndarray
    spacing: tuple[float, float, float] = DEFAULT_SPACING
    case_id: str = ""

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data)
        if self.data.ndim != 4 or self.data.shape[0] != len(MODALITIES):
            raise ValueError(f"expected a (4, X, Y, Z) array, got shape {self.data.shape}")
        self.spacing = _check_spacing(self.spacing)

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.data.shape[1:])  # type: ignore[return-value]

    def channel(self, name: str) -> np.ndarray:
        return self.data[MODALITIES.index(name)]

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.data)))


@dataclass
class LabelMap:
    labels: np.ndarray
    spacing: tuple[float, float, float] = DEFAULT_SPACING

    def __post_init__(self) -> None:
        self.labels = np.asarray(self.labels)
        if self.labels.ndim != 3:
            raise ValueError(f"expected a 3D label array, got shape {self.labels.shape}")
        if not np.issubdtype(self.labels.dtype, np.integer):
            if not np.all(np.mod(self.labels, 1) == 0):
                raise ValueError("label array must hold integer values")
            self.labels = self.labels.astype(np.uint8)
        self.spacing = _check_spacing(self.spacing)

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.labels.shape)  # type: ignore[return-value]


@dataclass
class RegionMask:
    mask: np.ndarray
    region: Region

    def __post_init__(self) -> None:
        self.mask = np.asarray(self.mask).astype(bool, copy=False)
        self.region = Region(self.region)


@dataclass
class HierarchyReport:
    valid: bool
    counts: dict[int, int] = field(default_factory=dict)
    invalid_values: list[int] = field(default_factory=list)


def region_mask_from_labels(labels: LabelMap | np.ndarray, region: Region | str) -> RegionMask:
    """Binary mask of one nested region (WT, TC or ET) from a label map."""
    try:
        region = Region(region)
    except ValueError:
        raise ValueError(f"unknown region {region!r}; expected one of WT, TC, ET") from None
    arr = labels.labels if isinstance(labels, LabelMap) else np.asarray(labels)
    return RegionMask(np.isin(arr, _REGION_LABELS[region]), region)


def compose_labels(
    wt: RegionMask | np.ndarray,
    tc: RegionMask | np.ndarray,
    et: RegionMask | np.ndarray,
    spacing: Sequence[float] = DEFAULT_SPACING,
) -> LabelMap:
    """Fuse three region masks into a label map.

    Hierarchy violations are clipped rather than rejected: TC is intersected
    with WT and ET with the clipped TC.
    """
    wt_m, tc_m, et_m = (
        (m.mask if isinstance(m, RegionMask) else np.asarray(m)).astype(bool) for m in (wt, tc, et)
    )
    if not (wt_m.shape == tc_m.shape == et_m.shape):
        raise ValueError(f"mask shapes differ: WT {wt_m.shape}, TC {tc_m.shape}, ET {et_m.shape}")
    tc_m = tc_m & wt_m
    et_m = et_m & tc_m
    out = np.zeros(wt_m.shape, dtype=np.uint8)
    out[wt_m] = 2
    out[tc_m] = 1
    out[et_m] = 4
    return LabelMap(out, spacing)


def validate_hierarchy(labels: LabelMap | np.ndarray) -> HierarchyReport:
    arr = labels.labels if isinstance(labels, LabelMap) else np.asarray(labels)
    values, counts = np.unique(arr, return_counts=True)
    count_map = {int(v): int(c) for v, c in zip(values, counts)}
    bad = sorted(v for v in count_map if v not in LABEL_VALUES)
    return HierarchyReport(valid=not bad, counts=count_map, invalid_values=bad)
