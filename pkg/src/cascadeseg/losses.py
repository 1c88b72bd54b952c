"""Focal loss with deep-supervision and cascade aggregation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import torch

from cascadeseg.cascade import CascadeOutput
from cascadeseg.unet import StepOutput


@dataclass
class FocalParams:
    gamma: float = 2.0
    alpha: float = 0.25
    epsilon: float = 1e-7

    def __post_init__(self) -> None:
        if self.gamma < 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not 0.0 < self.epsilon < 0.5:
            raise ValueError(f"epsilon must lie in (0, 0.5), got {self.epsilon}")


def focal_loss(probs: torch.Tensor, targets: torch.Tensor, params: FocalParams | None = None) -> torch.Tensor:
    """Voxel-mean of ``-alpha_t * (1 - p_t)**gamma * log(p_t)``."""
    params = params or FocalParams()
    if probs.shape != targets.shape:
        raise ValueError(f"probs {tuple(probs.shape)} and targets {tuple(targets.shape)} shapes differ")
    p = probs.clamp(params.epsilon, 1.0 - params.epsilon)
    pos = targets > 0.5
    p_t = torch.where(pos, p, 1.0 - p)
    alpha_t = torch.where(pos, torch.full_like(p, params.alpha), torch.full_like(p, 1.0 - params.alpha))
    if params.gamma == 0:
        modulating = torch.ones_like(p_t)
    else:
        modulating = (1.0 - p_t) ** params.gamma
    return (-alpha_t * modulating * torch.log(p_t)).mean()


def deep_supervised_loss(
    output: StepOutput,
    target: torch.Tensor,
    aux_weights: Sequence[float] = (0.5, 0.5, 0.5),
    params: FocalParams | None = None,
) -> torch.Tensor:
    if len(aux_weights) != len(output.aux):
        raise ValueError(f"{len(output.aux)} auxiliary heads but {len(aux_weights)} weights")
    loss = focal_loss(output.main, target, params)
    for w, aux in zip(aux_weights, output.aux):
        if w:
            loss = loss + w * focal_loss(aux, target, params)
    return loss


def cascade_step_losses(
    outputs: CascadeOutput,
    targets: Sequence[torch.Tensor],
    aux_weights: Sequence[float] = (0.5, 0.5, 0.5),
    params: FocalParams | None = None,
) -> list[torch.Tensor]:
    if len(targets) != 3:
        raise ValueError(f"expected WT, TC and ET targets, got {len(targets)}")
    return [deep_supervised_loss(o, t, aux_weights, params) for o, t in zip(outputs, targets)]


def cascade_loss(
    outputs: CascadeOutput,
    targets: Sequence[torch.Tensor],
    step_weights: Sequence[float] = (1.0, 1.0, 1.0),
    aux_weights: Sequence[float] = (0.5, 0.5, 0.5),
    params: FocalParams | None = None,
) -> torch.Tensor:
    if len(step_weights) != 3:
        raise ValueError(f"expected 3 step weights, got {len(step_weights)}")
    steps = cascade_step_losses(outputs, targets, aux_weights, params)
    return sum(w * s for w, s in zip(step_weights, steps))  # type: ignore[return-value]
