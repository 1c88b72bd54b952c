"""Bias-field removal and per-modality intensity normalization.

The bias estimator is a robust polynomial fit in log space: a smooth
multiplicative field becomes an additive low-order polynomial after the log,
and Tukey-biweighted refits discount lesion voxels whose intensity departs
from the dominant tissue. It is a lightweight stand-in for N4; a real N4
binary can be plugged in per case through ``run_external_bias``.
"""

from __future__ import annotations

import shlex
import subprocess
import tempfile
from pathlib import Path

import numpy as np

from cascadeseg import _poly
from cascadeseg.core_types import ModalityStack

MIN_SUPPORT = 1000
DEFAULT_DEGREE = 3
DEFAULT_ITERATIONS = 5
_TUKEY_C = 4.685


class BiasEstimationError(ValueError):
    pass


def _support(volume: np.ndarray) -> np.ndarray:
    return volume != 0


def estimate_bias_field(
    volume: np.ndarray,
    degree: int = DEFAULT_DEGREE,
    iterations: int = DEFAULT_ITERATIONS,
) -> np.ndarray:
    """Smooth positive multiplicative field with mean 1 over the nonzero support."""
    volume = np.asarray(volume, dtype=float)
    if volume.ndim != 3:
        raise ValueError(f"expected a 3D volume, got shape {volume.shape}")
    if not 1 <= degree <= 4:
        raise ValueError(f"degree must be in [1, 4], got {degree}")
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    support = _support(volume)
    n = int(support.sum())
    if n < MIN_SUPPORT:
        raise BiasEstimationError(f"nonzero support has {n} voxels; at least {MIN_SUPPORT} required")
    values = volume[support]
    if np.any(values < 0) or not np.all(np.isfinite(values)):
        raise BiasEstimationError("bias estimation needs finite, non-negative intensities")

    exponents = _poly.monomial_exponents(degree)
    design = _poly.design_matrix(np.argwhere(support).astype(float), volume.shape, exponents)
    target = np.log(values)

    weights = np.ones(n)
    coef = np.zeros(len(exponents))
    for _ in range(iterations):
        sw = np.sqrt(weights)
        coef, _, rank, _ = np.linalg.lstsq(design * sw[:, None], target * sw, rcond=None)
        if rank < len(exponents):
            raise BiasEstimationError(
                f"rank-deficient polynomial fit (rank {rank} < {len(exponents)} terms); support too degenerate"
            )
        resid = target - design @ coef
        scale = 1.4826 * np.median(np.abs(resid - np.median(resid)))
        if scale <= 1e-12:
            break
        u = resid / (_TUKEY_C * scale)
        weights = np.where(np.abs(u) < 1.0, (1.0 - u**2) ** 2, 0.0)

    # the constant term absorbs tissue intensity; only the spatial variation is bias
    log_field = _poly.evaluate(np.concatenate([[0.0], coef[1:]]), exponents, volume.shape)
    field = np.exp(log_field)
    return field / field[support].mean()


def correct_bias(
    volume: np.ndarray,
    degree: int = DEFAULT_DEGREE,
    iterations: int = DEFAULT_ITERATIONS,
) -> np.ndarray:
    """Divide the estimated field out on the support; zeros stay exactly zero."""
    volume = np.asarray(volume)
    field = estimate_bias_field(volume, degree, iterations)
    support = _support(volume)
    out = np.zeros_like(volume, dtype=np.result_type(volume.dtype, np.float32))
    out[support] = volume[support] / field[support]
    return out


def zscore_normalize(volume: np.ndarray) -> np.ndarray:
    """Zero mean, unit variance over nonzero voxels; everything else set to 0."""
    volume = np.asarray(volume)
    support = _support(volume)
    if not support.any():
        raise ValueError("cannot normalize: volume has no nonzero voxels")
    values = volume[support].astype(np.float64)
    mean = values.mean()
    std = values.std()
    if not std > 0:
        raise ValueError("cannot normalize: support has zero variance")
    out = np.zeros(volume.shape, dtype=np.result_type(volume.dtype, np.float32))
    out[support] = (values - mean) / std
    return out


def run_external_bias(command: str, volume_path: Path, output_path: Path) -> None:
    """Run a user-supplied correction tool, e.g. ``"N4BiasFieldCorrection -i {input} -o {output}"``."""
    args = [a.format(input=str(volume_path), output=str(output_path)) for a in shlex.split(command)]
    proc = subprocess.run(args, capture_output=True, text=True)
    if proc.returncode != 0:
        raise RuntimeError(f"external bias command failed ({proc.returncode}): {proc.stderr.strip()[:200]}")
    if not Path(output_path).exists():
        raise RuntimeError(f"external bias command did not write {output_path}")


def _external_correct(volume: np.ndarray, spacing, command: str) -> np.ndarray:
    from cascadeseg.io import read_nifti, write_nifti

    with tempfile.TemporaryDirectory() as tmp:
        src, dst = Path(tmp) / "in.nii.gz", Path(tmp) / "out.nii.gz"
        write_nifti(src, volume.astype(np.float32), spacing)
        run_external_bias(command, src, dst)
        corrected, _ = read_nifti(dst)
    corrected = np.asarray(corrected, dtype=np.float32)
    corrected[volume == 0] = 0.0
    return corrected


def preprocess_case(
    stack: ModalityStack,
    degree: int = DEFAULT_DEGREE,
    iterations: int = DEFAULT_ITERATIONS,
    external_bias_cmd: str | None = None,
) -> ModalityStack:
    """Bias correction then z-scoring, for each of the four channels."""
    out = np.empty(stack.data.shape, dtype=np.float32)
    for i in range(stack.data.shape[0]):
        channel = stack.data[i]
        if external_bias_cmd:
            corrected = _external_correct(channel, stack.spacing, external_bias_cmd)
        else:
            corrected = correct_bias(channel, degree, iterations)
        out[i] = zscore_normalize(corrected)
    return ModalityStack(out, stack.spacing, stack.case_id)
