"""Polynomial bases in normalized voxel coordinates."""

from __future__ import annotations

from itertools import product

import numpy as np


def monomial_exponents(degree: int) -> list[tuple[int, int, int]]:
    """All (a, b, c) with a + b + c <= degree, constant term first."""
    terms = [e for e in product(range(degree + 1), repeat=3) if sum(e) <= degree]
    return sorted(terms, key=lambda e: (sum(e), e))


def normalized_axes(shape: tuple[int, ...]) -> list[np.ndarray]:
    """Per-axis coordinates rescaled to [-1, 1]."""
    return [np.linspace(-1.0, 1.0, n) if n > 1 else np.zeros(1) for n in shape]


def evaluate(coefficients: np.ndarray, exponents: list[tuple[int, int, int]], shape: tuple[int, int, int]) -> np.ndarray:
    ax = normalized_axes(shape)
    out = np.zeros(shape)
    for coef, (a, b, c) in zip(coefficients, exponents):
        if coef == 0:
            continue
        out += coef * (ax[0][:, None, None] ** a) * (ax[1][None, :, None] ** b) * (ax[2][None, None, :] ** c)
    return out


def design_matrix(coords: np.ndarray, shape: tuple[int, int, int], exponents: list[tuple[int, int, int]]) -> np.ndarray:
    """Rows are monomials evaluated at integer voxel ``coords`` of shape (N, 3)."""
    scale = np.array([2.0 / (n - 1) if n > 1 else 0.0 for n in shape])
    x = coords * scale - np.where(scale > 0, 1.0, 0.0)
    cols = [x[:, 0] ** a * x[:, 1] ** b * x[:, 2] ** c for a, b, c in exponents]
    return np.stack(cols, axis=1)
