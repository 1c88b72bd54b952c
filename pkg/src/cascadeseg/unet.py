"""3D U-Net with three deep-supervision heads on the expanding path."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import NamedTuple

import torch
import torch.nn.functional as F
from torch import nn

N_AUX = 3


@dataclass
class UNetConfig:
    in_channels: int = 1
    levels: int = 4
    base_channels: int = 16
    norm: str = "instance"
    aux_outputs: int = N_AUX

    def __post_init__(self) -> None:
        if self.levels < 2:
            raise ValueError(f"levels must be >= 2, got {self.levels}")
        if self.in_channels < 1 or self.base_channels < 1:
            raise ValueError("in_channels and base_channels must be positive")
        if self.norm not in ("instance", "none"):
            raise ValueError(f"norm must be 'instance' or 'none', got {self.norm!r}")
        if self.aux_outputs != N_AUX:
            raise ValueError(f"aux_outputs is fixed at {N_AUX}, got {self.aux_outputs}")

    @property
    def channel_ladder(self) -> list[int]:
        return [self.base_channels * 2**i for i in range(self.levels)]

    @property
    def divisor(self) -> int:
        return 2 ** (self.levels - 1)

    def to_dict(self) -> dict:
        return asdict(self)


class StepOutput(NamedTuple):
    main: torch.Tensor
    aux: tuple[torch.Tensor, torch.Tensor, torch.Tensor]


def _norm(kind: str, channels: int) -> nn.Module:
    if kind == "instance":
        return nn.InstanceNorm3d(channels, affine=True)
    return nn.Identity()


class ConvBlock(nn.Sequential):
    def __init__(self, in_ch: int, out_ch: int, norm: str):
        super().__init__(
            nn.Conv3d(in_ch, out_ch, 3, padding=1),
            _norm(norm, out_ch),
            nn.LeakyReLU(0.01, inplace=True),
            nn.Conv3d(out_ch, out_ch, 3, padding=1),
            _norm(norm, out_ch),
            nn.LeakyReLU(0.01, inplace=True),
        )


class UpBlock(nn.Module):
    """Trilinear x2 upsampling, a 3x3x3 conv halving channels, skip concat, conv block."""

    def __init__(self, in_ch: int, out_ch: int, norm: str):
        super().__init__()
        self.reduce = nn.Conv3d(in_ch, out_ch, 3, padding=1)
        self.block = ConvBlock(2 * out_ch, out_ch, norm)

    def forward(self, x: torch.Tensor, skip: torch.Tensor) -> torch.Tensor:
        x = F.interpolate(x, size=skip.shape[-3:], mode="trilinear", align_corners=False)
        return self.block(torch.cat([self.reduce(x), skip], dim=1))


class UNet3D(nn.Module):
    """Encoder halves resolution and doubles channels per level; the decoder mirrors it.

    Auxiliary heads are 1x1x1 projections tapping, coarsest first, the
    bottleneck and the decoder stages above it, excluding the full-resolution
    stage that feeds the main head. With fewer than four levels the remaining
    heads reuse the finest decoder stage.
    """

    def __init__(self, config: UNetConfig):
        super().__init__()
        self.config = config
        ch = config.channel_ladder
        self.encoders = nn.ModuleList(
            [ConvBlock(config.in_channels, ch[0], config.norm)]
            + [ConvBlock(ch[i - 1], ch[i], config.norm) for i in range(1, config.levels)]
        )
        self.decoders = nn.ModuleList(
            [UpBlock(ch[i + 1], ch[i], config.norm) for i in reversed(range(config.levels - 1))]
        )
        # decoder-side feature maps, coarsest first: bottleneck, then each decoder stage
        tap_channels = [ch[-1]] + [ch[i] for i in reversed(range(config.levels - 1))]
        self.aux_taps = [min(i, len(tap_channels) - 1) for i in range(N_AUX)]
        self.aux_heads = nn.ModuleList([nn.Conv3d(tap_channels[t], 1, 1) for t in self.aux_taps])
        self.head = nn.Conv3d(ch[0], 1, 1)

    def check_input(self, x: torch.Tensor) -> None:
        if x.ndim != 5:
            raise ValueError(f"expected input of shape (B, C, X, Y, Z), got {tuple(x.shape)}")
        if x.shape[1] != self.config.in_channels:
            raise ValueError(f"expected {self.config.in_channels} input channels, got {x.shape[1]}")
        d = self.config.divisor
        for axis, n in enumerate(x.shape[2:]):
            if n % d:
                raise ValueError(f"spatial axis {axis} has size {n}, not divisible by {d} (levels={self.config.levels})")

    def forward(self, x: torch.Tensor) -> StepOutput:
        self.check_input(x)
        size = x.shape[-3:]
        skips = []
        for i, enc in enumerate(self.encoders):
            if i:
                x = F.max_pool3d(x, 2)
            x = enc(x)
            skips.append(x)
        taps = [x]
        for dec, skip in zip(self.decoders, reversed(skips[:-1])):
            x = dec(x, skip)
            taps.append(x)
        main = torch.sigmoid(self.head(x))
        aux = []
        for head, t in zip(self.aux_heads, self.aux_taps):
            logits = head(taps[t])
            if logits.shape[-3:] != size:
                logits = F.interpolate(logits, size=size, mode="trilinear", align_corners=False)
            aux.append(torch.sigmoid(logits))
        return StepOutput(main, tuple(aux))  # type: ignore[arg-type]


def build(config: UNetConfig) -> UNet3D:
    return UNet3D(config)


def parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())
