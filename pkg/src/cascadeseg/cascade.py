"""Three chained step networks with multiplicative mask gating.

Step 1 sees (flair, t1ce) and predicts WT; step 2 sees t1ce gated by the WT
probability and predicts TC; step 3 sees t1ce gated by the TC probability and
predicts ET.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import NamedTuple

import torch
from torch import nn

from cascadeseg.unet import StepOutput, UNet3D, UNetConfig

DEVICE_ENV = "CASCADESEG_DEVICE"


def default_device() -> torch.device:
    """Device named by ``CASCADESEG_DEVICE`` (e.g. ``cuda:0``), else CPU."""
    return torch.device(os.environ.get(DEVICE_ENV) or "cpu")

GATING_MODES = ("soft", "hard")


@dataclass
class CascadeConfig:
    levels: int = 4
    base_channels: int = 16
    norm: str = "instance"
    train_gating: str = "soft"
    infer_gating: str = "hard"
    gate_threshold: float = 0.5

    def __post_init__(self) -> None:
        for mode in (self.train_gating, self.infer_gating):
            if mode not in GATING_MODES:
                raise ValueError(f"gating mode must be one of {GATING_MODES}, got {mode!r}")
        if not 0.0 < self.gate_threshold < 1.0:
            raise ValueError("gate_threshold must lie in (0, 1)")

    def step_config(self, step: int) -> UNetConfig:
        return UNetConfig(
            in_channels=2 if step == 1 else 1,
            levels=self.levels,
            base_channels=self.base_channels,
            norm=self.norm,
        )


class CascadeOutput(NamedTuple):
    wt: StepOutput
    tc: StepOutput
    et: StepOutput

    @property
    def probabilities(self) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        return self.wt.main, self.tc.main, self.et.main


def apply_mask(volume: torch.Tensor, gate: torch.Tensor) -> torch.Tensor:
    if volume.shape != gate.shape:
        raise ValueError(f"volume shape {tuple(volume.shape)} and gate shape {tuple(gate.shape)} differ")
    return volume * gate


def harden(prob: torch.Tensor, threshold: float = 0.5) -> torch.Tensor:
    return (prob > threshold).to(prob.dtype)


class CascadeModel(nn.Module):
    def __init__(self, config: CascadeConfig | None = None):
        super().__init__()
        self.config = config or CascadeConfig()
        self.step1 = UNet3D(self.config.step_config(1))
        self.step2 = UNet3D(self.config.step_config(2))
        self.step3 = UNet3D(self.config.step_config(3))

    @property
    def divisor(self) -> int:
        return self.step1.config.divisor

    def forward(self, flair: torch.Tensor, t1ce: torch.Tensor, gating: str | None = None) -> CascadeOutput:
        """Inputs are (B, 1, X, Y, Z).

        ``gating`` defaults to the training mode while ``self.training`` and to
        the inference mode otherwise. With hard gates each step's probabilities
        are also zeroed outside the previous step's binarized mask, so the
        nesting of binarized predictions holds by construction.
        """
        if flair.shape != t1ce.shape:
            raise ValueError(f"flair {tuple(flair.shape)} and t1ce {tuple(t1ce.shape)} shapes differ")
        if gating is None:
            gating = self.config.train_gating if self.training else self.config.infer_gating
        if gating not in GATING_MODES:
            raise ValueError(f"gating mode must be one of {GATING_MODES}, got {gating!r}")
        thr = self.config.gate_threshold

        wt = self.step1(torch.cat([flair, t1ce], dim=1))
        gate = wt.main if gating == "soft" else harden(wt.main, thr)
        tc = self.step2(apply_mask(t1ce, gate))
        if gating == "hard":
            tc = _restrict(tc, gate)
        gate = tc.main if gating == "soft" else harden(tc.main, thr)
        et = self.step3(apply_mask(t1ce, gate))
        if gating == "hard":
            et = _restrict(et, gate)
        return CascadeOutput(wt, tc, et)


def _restrict(out: StepOutput, gate: torch.Tensor) -> StepOutput:
    return StepOutput(out.main * gate, tuple(a * gate for a in out.aux))  # type: ignore[arg-type]


def forward_cascade(model: CascadeModel, flair: torch.Tensor, t1ce: torch.Tensor, gating: str | None = None) -> CascadeOutput:
    return model(flair, t1ce, gating)
