"""Implicit object-aware fusion of early encoder levels with the memory feature."""
from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from camsam2.errors import InvariantError


class CompressionStage(nn.Module):
    """conv3x3 (c_j -> c0), conv1x1 (c0 -> c0), bilinear upsample to level 0.

    No activation sits between the convolutions, so a bias-free stage is linear.
    """

    def __init__(self, in_channels: int, out_channels: int, scale: int, bias: bool = True) -> None:
        super().__init__()
        self.conv1 = nn.Conv2d(in_channels, out_channels, 3, padding=1, bias=bias)
        self.conv2 = nn.Conv2d(out_channels, out_channels, 1, bias=bias)
        self.scale = scale

    def forward(self, x: torch.Tensor, size: tuple[int, int]) -> torch.Tensor:
        x = self.conv2(self.conv1(x))
        if tuple(x.shape[-2:]) != tuple(size):
            x = F.interpolate(x[None], size=size, mode="bilinear", align_corners=False)[0]
        return x


class ImplicitFusion(nn.Module):
    def __init__(self, channels: tuple[int, int, int], bias: bool = True) -> None:
        super().__init__()
        c0 = channels[0]
        self.stages = nn.ModuleList(
            CompressionStage(c, c0, 2 ** j, bias=bias) for j, c in enumerate(channels)
        )

    def forward(self, f0: torch.Tensor, f1: torch.Tensor, fmem: torch.Tensor) -> torch.Tensor:
        h0, w0 = f0.shape[-2:]
        if f1.shape[-2:] != (h0 // 2, w0 // 2) or fmem.shape[-2:] != (h0 // 4, w0 // 4):
            raise InvariantError(
                f"pyramid shapes inconsistent: {tuple(f0.shape)}, {tuple(f1.shape)}, {tuple(fmem.shape)}")
        size = (h0, w0)
        return sum(stage(x, size) for stage, x in zip(self.stages, (f0, f1, fmem)))
