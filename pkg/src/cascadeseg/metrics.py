"""Overlap and surface-distance metrics per region, and boxplot summaries.

Undefined values are reported as NaN (sensitivity with empty truth,
specificity with no truth negatives); Hausdorff additionally carries an
explicit ``hausdorff_defined`` flag when either surface is empty.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage

from cascadeseg.core_types import DEFAULT_SPACING, REGIONS, LabelMap, Region, RegionMask, region_mask_from_labels

METRIC_NAMES = ("dice", "sensitivity", "specificity", "hausdorff")

_FACE_NEIGHBOURS = ndimage.generate_binary_structure(3, 1)


def _pair(pred, truth) -> tuple[np.ndarray, np.ndarray]:
    p = (pred.mask if isinstance(pred, RegionMask) else np.asarray(pred)).astype(bool)
    t = (truth.mask if isinstance(truth, RegionMask) else np.asarray(truth)).astype(bool)
    if p.shape != t.shape:
        raise ValueError(f"prediction shape {p.shape} and truth shape {t.shape} differ")
    return p, t


def dice(pred, truth) -> float:
    p, t = _pair(pred, truth)
    denom = int(p.sum()) + int(t.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int((p & t).sum()) / denom


def sensitivity(pred, truth) -> float:
    p, t = _pair(pred, truth)
    n = int(t.sum())
    return int((p & t).sum()) / n if n else math.nan


def specificity(pred, truth) -> float:
    p, t = _pair(pred, truth)
    n = int((~t).sum())
    return int((~p & ~t).sum()) / n if n else math.nan


def surface(mask: np.ndarray) -> np.ndarray:
    """Foreground voxels with a face neighbour in the background or outside the volume."""
    mask = np.asarray(mask, dtype=bool)
    return mask & ~ndimage.binary_erosion(mask, structure=_FACE_NEIGHBOURS, border_value=0)


def directed_surface_distances(a: np.ndarray, b: np.ndarray, spacing: Sequence[float]) -> np.ndarray:
    """Distance (mm) from each surface voxel of ``a`` to the nearest surface voxel of ``b``."""
    sa, sb = surface(a), surface(b)
    dist_to_b = ndimage.distance_transform_edt(~sb, sampling=tuple(float(s) for s in spacing))
    return dist_to_b[sa]


def hausdorff(pred, truth, spacing: Sequence[float] = DEFAULT_SPACING, percentile: float = 100.0) -> float:
    """Symmetric surface Hausdorff distance in mm; NaN if either mask is empty.

    ``percentile`` < 100 replaces each directed maximum by that percentile
    (linear interpolation) before taking the larger of the two directions.
    """
    if not 0.0 < percentile <= 100.0:
        raise ValueError(f"percentile must lie in (0, 100], got {percentile}")
    p, t = _pair(pred, truth)
    if not p.any() or not t.any():
        return math.nan
    d_pt = directed_surface_distances(p, t, spacing)
    d_tp = directed_surface_distances(t, p, spacing)
    if percentile == 100.0:
        return float(max(d_pt.max(), d_tp.max()))
    return float(max(np.percentile(d_pt, percentile), np.percentile(d_tp, percentile)))


@dataclass
class MetricsRecord:
    case_id: str
    region: str
    dice: float
    sensitivity: float
    specificity: float
    hausdorff: float
    hausdorff_defined: bool

    def value(self, metric: str) -> float:
        if metric == "hausdorff" and not self.hausdorff_defined:
            return math.nan
        return getattr(self, metric)


def evaluate_masks(case_id: str, region: Region | str, pred, truth, spacing=DEFAULT_SPACING, percentile: float = 100.0) -> MetricsRecord:
    hd = hausdorff(pred, truth, spacing, percentile)
    return MetricsRecord(
        case_id=case_id,
        region=Region(region).value,
        dice=dice(pred, truth),
        sensitivity=sensitivity(pred, truth),
        specificity=specificity(pred, truth),
        hausdorff=hd,
        hausdorff_defined=not math.isnan(hd),
    )


def evaluate_case(
    pred: LabelMap | np.ndarray,
    truth: LabelMap | np.ndarray,
    spacing: Sequence[float] | None = None,
    case_id: str = "",
    percentile: float = 100.0,
) -> list[MetricsRecord]:
    p_arr = pred.labels if isinstance(pred, LabelMap) else np.asarray(pred)
    t_arr = truth.labels if isinstance(truth, LabelMap) else np.asarray(truth)
    if p_arr.shape != t_arr.shape:
        raise ValueError(f"prediction shape {p_arr.shape} and truth shape {t_arr.shape} differ")
    if spacing is None:
        spacing = truth.spacing if isinstance(truth, LabelMap) else DEFAULT_SPACING
    return [
        evaluate_masks(
            case_id,
            region,
            region_mask_from_labels(p_arr, region).mask,
            region_mask_from_labels(t_arr, region).mask,
            spacing,
            percentile,
        )
        for region in REGIONS
    ]


# -- summaries ---------------------------------------------------------------


@dataclass
class BoxStats:
    n: int
    n_undefined: int
    mean: float
    median: float
    q1: float
    q3: float
    iqr: float
    whisker_low: float
    whisker_high: float
    n_outliers: int


def box_stats(values: Iterable[float]) -> BoxStats:
    """Boxplot statistics with linearly interpolated quartiles and 1.5 IQR whiskers."""
    arr = np.asarray(list(values), dtype=float)
    defined = arr[~np.isnan(arr)]
    n_undef = int(arr.size - defined.size)
    if defined.size == 0:
        nan = math.nan
        return BoxStats(0, n_undef, nan, nan, nan, nan, nan, nan, nan, 0)
    q1, med, q3 = np.percentile(defined, [25, 50, 75])
    iqr = q3 - q1
    lo_fence, hi_fence = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    inside = defined[(defined >= lo_fence) & (defined <= hi_fence)]
    return BoxStats(
        n=int(defined.size),
        n_undefined=n_undef,
        mean=float(defined.mean()),
        median=float(med),
        q1=float(q1),
        q3=float(q3),
        iqr=float(iqr),
        whisker_low=float(inside.min()),
        whisker_high=float(inside.max()),
        n_outliers=int(defined.size - inside.size),
    )


def summarize(records: Sequence[MetricsRecord]) -> dict[tuple[str, str], BoxStats]:
    """Boxplot statistics keyed by (region, metric), regions in WT/TC/ET order."""
    if not records:
        raise ValueError("cannot summarize an empty list of records")
    out: dict[tuple[str, str], BoxStats] = {}
    for region in REGIONS:
        rows = [r for r in records if r.region == region.value]
        if not rows:
            continue
        for metric in METRIC_NAMES:
            out[(region.value, metric)] = box_stats(r.value(metric) for r in rows)
    return out


# -- CSV ---------------------------------------------------------------------

RECORD_COLUMNS = [f.name for f in fields(MetricsRecord)]
BOX_FIELDS = [f.name for f in fields(BoxStats)]


def write_records_csv(path: Path | str, records: Sequence[MetricsRecord]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=RECORD_COLUMNS)
        writer.writeheader()
        for rec in records:
            row = asdict(rec)
            row["hausdorff_defined"] = int(rec.hausdorff_defined)
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def read_records_csv(path: Path | str) -> list[MetricsRecord]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(RECORD_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        return [
            MetricsRecord(
                case_id=row["case_id"],
                region=row["region"],
                dice=float(row["dice"]),
                sensitivity=float(row["sensitivity"]),
                specificity=float(row["specificity"]),
                hausdorff=float(row["hausdorff"]),
                hausdorff_defined=bool(int(row["hausdorff_defined"])),
            )
            for row in reader
        ]


def summary_columns() -> list[str]:
    return ["dataset", "region"] + [f"{m}_{s}" for m in METRIC_NAMES for s in BOX_FIELDS]


def write_summary_csv(path: Path | str, summary: dict[tuple[str, str], BoxStats], dataset: str = "validation") -> None:
    """One row per region, mirroring the layout of a per-region results table."""
    regions = [r.value for r in REGIONS if any(k[0] == r.value for k in summary)]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=summary_columns())
        writer.writeheader()
        for region in regions:
            row: dict[str, object] = {"dataset": dataset, "region": region}
            for metric in METRIC_NAMES:
                stats = asdict(summary[(region, metric)])
                for key in BOX_FIELDS:
                    v = stats[key]
                    row[f"{metric}_{key}"] = repr(float(v)) if isinstance(v, float) else v
            writer.writerow(row)
