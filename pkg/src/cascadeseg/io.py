"""NIfTI reading/writing and the on-disk dataset layout.

Layout: ``<root>/<case_id>/<case_id>_{flair,t1,t1ce,t2,seg}.nii.gz``.
"""

from __future__ import annotations

import gzip
from pathlib import Path
from typing import Iterator, Sequence

import nibabel as nib
import numpy as np

from cascadeseg.core_types import DEFAULT_SPACING, MODALITIES, LabelMap, ModalityStack


def case_file(root: Path | str, case_id: str, suffix: str) -> Path:
    return Path(root) / case_id / f"{case_id}_{suffix}.nii.gz"


def write_nifti(path: Path | str, array: np.ndarray, spacing: Sequence[float] = DEFAULT_SPACING) -> None:
    """Write a volume with a diagonal affine.

    The gzip stream is written with a zero timestamp so identical arrays give
    byte-identical files.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    img = nib.Nifti1Image(np.asarray(array), np.diag([*map(float, spacing), 1.0]))
    img.header.set_zooms(tuple(float(s) for s in spacing))
    raw = img.to_bytes()
    with open(path, "wb") as fh:
        with gzip.GzipFile(filename="", mode="wb", fileobj=fh, mtime=0) as gz:
            gz.write(raw)


def read_nifti(path: Path | str) -> tuple[np.ndarray, tuple[float, float, float]]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such volume: {path}")
    img = nib.load(str(path))
    zooms = tuple(float(z) for z in img.header.get_zooms()[:3])
    if len(zooms) != 3 or not all(z > 0 for z in zooms):
        zooms = DEFAULT_SPACING
    return np.asanyarray(img.dataobj), zooms  # type: ignore[return-value]


def list_cases(root: Path | str) -> list[str]:
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset directory not found: {root}")
    return sorted(
        p.name for p in root.iterdir() if p.is_dir() and case_file(root, p.name, MODALITIES[0]).exists()
    )


def load_case(root: Path | str, case_id: str, with_labels: bool = True) -> tuple[ModalityStack, LabelMap | None]:
    channels = []
    spacing = DEFAULT_SPACING
    for mod in MODALITIES:
        arr, spacing = read_nifti(case_file(root, case_id, mod))
        channels.append(arr.astype(np.float32))
    stack = ModalityStack(np.stack(channels), spacing, case_id)
    labels = None
    if with_labels:
        seg = case_file(root, case_id, "seg")
        if seg.exists():
            arr, _ = read_nifti(seg)
            labels = LabelMap(arr.astype(np.uint8), spacing)
    return stack, labels


def save_case(root: Path | str, stack: ModalityStack, labels: LabelMap | None = None) -> Path:
    for i, mod in enumerate(MODALITIES):
        write_nifti(case_file(root, stack.case_id, mod), stack.data[i].astype(np.float32), stack.spacing)
    if labels is not None:
        write_nifti(case_file(root, stack.case_id, "seg"), labels.labels.astype(np.uint8), stack.spacing)
    return Path(root) / stack.case_id


def iter_dataset(root: Path | str, with_labels: bool = True) -> Iterator[tuple[ModalityStack, LabelMap | None]]:
    for case_id in list_cases(root):
        yield load_case(root, case_id, with_labels)


def find_prediction(pred_root: Path | str, case_id: str) -> Path | None:
    """Locate a case's predicted label map, accepting flat or nested layouts.

    Falls back to ``<case_id>_seg.nii.gz`` so a ground-truth tree can be
    evaluated against itself.
    """
    pred_root = Path(pred_root)
    for candidate in (
        pred_root / case_id / f"{case_id}_pred.nii.gz",
        pred_root / f"{case_id}_pred.nii.gz",
        pred_root / case_id / f"{case_id}_seg.nii.gz",
    ):
        if candidate.exists():
            return candidate
    return None

