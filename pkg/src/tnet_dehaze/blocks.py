"""Reusable network blocks: residual dense block, stride-2 resampling
blocks, position/channel attention, and weighted skip fusion.

All blocks are pure functions of (input, parameters); none keeps hidden
state between calls. Weight initialization is routed through
``init_parameters`` so identically seeded builds are bit-identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, ShapeError


@dataclass(frozen=True)
class RdbSpec:
    """Residual dense block layout.

    ``channels`` maps are carried in and out, each inner 3x3 conv appends
    ``growth`` maps to the running concatenation, and ``layers`` counts all
    convolutions including the closing 1x1 projection.
    """

    channels: int
    growth: int = 16
    layers: int = 5

    def __post_init__(self) -> None:
        if self.channels < 1:
            raise ConfigError(f"RDB channel count must be positive, got {self.channels}")
        if self.growth < 1:
            raise ConfigError(f"RDB growth must be positive, got {self.growth}")
        if self.layers < 2:
            raise ConfigError(
                "an RDB needs at least one growth conv plus the 1x1 projection "
                f"(layers >= 2), got layers={self.layers}"
            )


def _check_feature(x: torch.Tensor, what: str) -> None:
    if x.dim() != 4:
        raise ShapeError(f"{what} expects a (N, C, H, W) tensor, got {tuple(x.shape)}")


class ResidualDenseBlock(nn.Module):
    """Dense stack of 3x3 convs closed by a 1x1 projection and a residual add.

    Conv l consumes the concatenation of the block input and every previous
    conv output; the projection folds the final concatenation back to the
    input channel count.
    """

    def __init__(self, spec: RdbSpec):
        super().__init__()
        self.spec = spec
        self.convs = nn.ModuleList(
            nn.Conv2d(spec.channels + l * spec.growth, spec.growth, 3, padding=1)
            for l in range(spec.layers - 1)
        )
        self.project = nn.Conv2d(
            spec.channels + (spec.layers - 1) * spec.growth, spec.channels, 1
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        _check_feature(x, "ResidualDenseBlock")
        if x.shape[1] != self.spec.channels:
            raise ConfigError(
                f"RDB configured for {self.spec.channels} channels, input has {x.shape[1]}"
            )
        feats = [x]
        for conv in self.convs:
            feats.append(F.relu(conv(torch.cat(feats, dim=1))))
        return x + self.project(torch.cat(feats, dim=1))


class DownsampleBlock(nn.Module):
    """Halves H and W with a stride-2 3x3 conv (+ReLU), then doubles the
    channel count with a 1x1 conv (no activation)."""

    def __init__(self, channels: int):
        super().__init__()
        self.spatial = nn.Conv2d(channels, channels, 3, stride=2, padding=1)
        self.expand = nn.Conv2d(channels, 2 * channels, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        _check_feature(x, "DownsampleBlock")
        h, w = x.shape[-2], x.shape[-1]
        if h % 2 or w % 2:
            raise ShapeError(f"downsampling needs even spatial dims, got {h}x{w}")
        return self.expand(F.relu(self.spatial(x)))


class UpsampleBlock(nn.Module):
    """Doubles H and W with a stride-2 transposed conv (+ReLU), then halves
    the channel count with a 1x1 conv (no activation)."""

    def __init__(self, channels: int):
        super().__init__()
        if channels % 2:
            raise ConfigError(f"upsampling halves the channel count; {channels} is odd")
        self.spatial = nn.ConvTranspose2d(channels, channels, 4, stride=2, padding=1)
        self.reduce = nn.Conv2d(channels, channels // 2, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        _check_feature(x, "UpsampleBlock")
        if x.shape[1] != self.spatial.in_channels:
            raise ConfigError(
                f"UpsampleBlock configured for {self.spatial.in_channels} channels, "
                f"input has {x.shape[1]}"
            )
        return self.reduce(F.relu(self.spatial(x)))


def position_attention(x: torch.Tensor, gamma_pos) -> torch.Tensor:
    """x + gamma_pos * (X @ softmax(X^T X)^T), per sample.

    X is the (C, H*W) flattening of each sample; the softmax runs over the
    last axis, so the pixel-similarity matrix is row-stochastic.
    """
    _check_feature(x, "position_attention")
    n, c, h, w = x.shape
    flat = x.reshape(n, c, h * w)
    energy = torch.bmm(flat.transpose(1, 2), flat)  # (N, HW, HW)
    attn = torch.softmax(energy, dim=-1)
    increment = torch.bmm(flat, attn.transpose(1, 2)).reshape(n, c, h, w)
    return x + gamma_pos * increment


def channel_attention(x: torch.Tensor, gamma_chan) -> torch.Tensor:
    """x + gamma_chan * (softmax(X X^T) @ X), per sample."""
    _check_feature(x, "channel_attention")
    n, c, h, w = x.shape
    flat = x.reshape(n, c, h * w)
    energy = torch.bmm(flat, flat.transpose(1, 2))  # (N, C, C)
    attn = torch.softmax(energy, dim=-1)
    increment = torch.bmm(attn, flat).reshape(n, c, h, w)
    return x + gamma_chan * increment


class DualAttention(nn.Module):
    """Position and channel attention evaluated in parallel, outputs summed.

    Both branch scales start at zero, so the block is exactly 2x the input
    at initialization and learns how much attention to mix in.
    """

    def __init__(self):
        super().__init__()
        self.gamma_pos = nn.Parameter(torch.zeros(()))
        self.gamma_chan = nn.Parameter(torch.zeros(()))

    def reset_parameters(self) -> None:
        with torch.no_grad():
            self.gamma_pos.zero_()
            self.gamma_chan.zero_()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return position_attention(x, self.gamma_pos) + channel_attention(x, self.gamma_chan)


class WeightedFusion(nn.Module):
    """Per-channel weighted sum of a lateral and a vertical feature:
    out[:, c] = alpha[c] * lateral[:, c] + beta[c] * vertical[:, c].

    Both vectors start at one (a plain additive skip). ``level`` only labels
    error messages so a failure inside a deep net names its skip level.
    """

    def __init__(self, channels: int, level: int | None = None):
        super().__init__()
        if channels < 1:
            raise ConfigError(f"fusion channel count must be positive, got {channels}")
        self.level = level
        self.alpha = nn.Parameter(torch.ones(channels))
        self.beta = nn.Parameter(torch.ones(channels))

    def reset_parameters(self) -> None:
        with torch.no_grad():
            self.alpha.fill_(1.0)
            self.beta.fill_(1.0)

    def _where(self) -> str:
        return "" if self.level is None else f" at skip level {self.level}"

    def forward(self, lateral: torch.Tensor, vertical: torch.Tensor) -> torch.Tensor:
        if lateral.shape != vertical.shape:
            raise ShapeError(
                f"fusion{self._where()} got mismatched shapes "
                f"{tuple(lateral.shape)} vs {tuple(vertical.shape)}"
            )
        if lateral.shape[1] != self.alpha.numel():
            raise ConfigError(
                f"fusion{self._where()} holds {self.alpha.numel()}-channel weights, "
                f"inputs have {lateral.shape[1]} channels"
            )
        a = self.alpha.view(1, -1, 1, 1)
        b = self.beta.view(1, -1, 1, 1)
        return a * lateral + b * vertical


def init_parameters(module: nn.Module, seed: int) -> None:
    """Deterministically (re)initialize every block parameter under ``module``.

    Conv weights draw from uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) with
    fan_in = in_channels * kernel area; biases are zeroed. Attention scales
    reset to zero and fusion vectors to one. Draws happen in registration
    order from a dedicated generator, so equal seeds give equal parameters.
    """
    gen = torch.Generator().manual_seed(seed)
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
            in_ch = m.weight.shape[1] if isinstance(m, nn.Conv2d) else m.weight.shape[0]
            fan_in = in_ch * m.kernel_size[0] * m.kernel_size[1]
            bound = 1.0 / math.sqrt(fan_in)
            with torch.no_grad():
                m.weight.uniform_(-bound, bound, generator=gen)
                if m.bias is not None:
                    m.bias.zero_()
        elif isinstance(m, (DualAttention, WeightedFusion)):
            m.reset_parameters()


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())
