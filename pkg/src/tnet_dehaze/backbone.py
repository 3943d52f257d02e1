"""The T-Net backbone: a U-shaped encoder-decoder over residual dense
blocks with an attention bottleneck and weighted per-channel skip fusion.

Level i carries base_channels * 2**i maps at 1/2**i of the input
resolution. The encoder stacks downsample blocks with trunk RDBs between
them; the decoder mirrors it with upsample blocks, trunk RDBs over the
fused features, and one lateral RDB per skip level (the level-0 skip is an
identity, keeping the lateral RDB count at scales - 1).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import torch
import torch.nn as nn

from .blocks import (
    DownsampleBlock,
    DualAttention,
    RdbSpec,
    ResidualDenseBlock,
    UpsampleBlock,
    WeightedFusion,
    count_parameters,
    init_parameters,
)
from .errors import ConfigError, ShapeError

logger = logging.getLogger("tnet_dehaze")


@dataclass(frozen=True)
class TNetConfig:
    """Architecture hyperparameters.

    ``scales`` is the number of down/up pairs, ``trunk_rdbs`` the number of
    encoder/decoder RDB pairs on the trunk. When trunk_rdbs differs from
    scales - 1, the pairs are distributed over the scales - 1 trunk slots
    deepest-first (fewer pairs leave shallow slots empty; more pairs stack
    several RDBs per slot).
    """

    scales: int = 4
    trunk_rdbs: int = 3
    base_channels: int = 16
    in_channels: int = 6
    out_channels: int = 3
    rdb_growth: int = 16
    rdb_layers: int = 5

    def __post_init__(self) -> None:
        if self.scales < 1:
            raise ConfigError(f"scales must be >= 1, got {self.scales}")
        if self.trunk_rdbs < 0:
            raise ConfigError(f"trunk_rdbs must be >= 0, got {self.trunk_rdbs}")
        if self.scales == 1 and self.trunk_rdbs > 0:
            raise ConfigError(
                "scales=1 leaves no trunk level between conv-in and the bottleneck "
                f"to host {self.trunk_rdbs} RDB pair(s); set trunk_rdbs=0 or scales>=2"
            )
        for name in ("base_channels", "in_channels", "out_channels"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        # Delegates growth/layers validation.
        RdbSpec(self.base_channels, self.rdb_growth, self.rdb_layers)

    def level_channels(self) -> list[int]:
        """Channel count per level, index 0 (full resolution) to scales."""
        return [self.base_channels * 2**i for i in range(self.scales + 1)]

    def trunk_rdb_counts(self) -> dict[int, int]:
        """How many trunk RDBs sit at each level 1..scales-1, deepest-first."""
        slots = self.scales - 1
        if slots == 0:
            return {}
        base, extra = divmod(self.trunk_rdbs, slots)
        return {
            level: base + (1 if (slots - level) < extra else 0)
            for level in range(1, self.scales)
        }


def _rdb_stack(spec: RdbSpec, count: int) -> nn.Sequential:
    return nn.Sequential(*[ResidualDenseBlock(spec) for _ in range(count)])


class TNet(nn.Module):
    """See module docstring for the wiring; ``debug_shapes`` turns on
    per-level shape assertions."""

    def __init__(self, config: TNetConfig):
        super().__init__()
        self.config = config
        self.debug_shapes = False
        chans = config.level_channels()
        counts = config.trunk_rdb_counts()

        self.conv_in = nn.Conv2d(config.in_channels, chans[0], 3, padding=1)
        self.down = nn.ModuleDict()
        self.up = nn.ModuleDict()
        self.enc = nn.ModuleDict()
        self.dec = nn.ModuleDict()
        self.lat = nn.ModuleDict()
        self.fuse = nn.ModuleDict()
        for i in range(1, config.scales + 1):
            self.down[str(i)] = DownsampleBlock(chans[i - 1])
            self.up[str(i)] = UpsampleBlock(chans[i])
        for i in range(1, config.scales):
            spec = RdbSpec(chans[i], config.rdb_growth, config.rdb_layers)
            if counts[i]:
                self.enc[str(i)] = _rdb_stack(spec, counts[i])
                self.dec[str(i)] = _rdb_stack(spec, counts[i])
            self.lat[str(i)] = ResidualDenseBlock(spec)
        for i in range(config.scales):
            self.fuse[str(i)] = WeightedFusion(chans[i], level=i)
        self.attention = DualAttention()
        self.conv_out = nn.Conv2d(chans[0], config.out_channels, 3, padding=1)

    def parameter_count(self) -> int:
        return count_parameters(self)

    def _check_input(self, x: torch.Tensor) -> None:
        if x.dim() != 4:
            raise ShapeError(f"expected a (N, C, H, W) input, got {tuple(x.shape)}")
        if x.shape[1] != self.config.in_channels:
            raise ConfigError(
                f"network built for {self.config.in_channels} input channels, "
                f"got {x.shape[1]}"
            )
        h, w = int(x.shape[-2]), int(x.shape[-1])
        ch, cw = h, w
        for i in range(1, self.config.scales + 1):
            if ch % 2 or cw % 2:
                raise ShapeError(
                    f"input {h}x{w} is not divisible by {2**self.config.scales}: "
                    f"down level {i} would see {ch}x{cw}"
                )
            ch //= 2
            cw //= 2

    def _assert_level(self, feat: torch.Tensor, level: int, n: int, h: int, w: int) -> None:
        chans = self.config.level_channels()
        want = (n, chans[level], h >> level, w >> level)
        if tuple(feat.shape) != want:
            raise ShapeError(
                f"internal wiring error at level {level}: "
                f"expected {want}, got {tuple(feat.shape)}"
            )

    def _lateral(self, level: int, feat: torch.Tensor) -> torch.Tensor:
        if level == 0:
            return feat
        return self.lat[str(level)](feat)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        self._check_input(x)
        cfg = self.config
        n, h, w = x.shape[0], int(x.shape[-2]), int(x.shape[-1])

        feats = {0: self.conv_in(x)}
        for i in range(1, cfg.scales + 1):
            f = self.down[str(i)](feats[i - 1])
            if str(i) in self.enc:
                f = self.enc[str(i)](f)
            if self.debug_shapes:
                self._assert_level(f, i, n, h, w)
            feats[i] = f

        bottom = self.attention(feats[cfg.scales])

        top = cfg.scales - 1  # deepest skip level
        vertical = self.up[str(cfg.scales)](bottom)
        fused = self.fuse[str(top)](self._lateral(top, feats[top]), vertical)
        for i in range(top, 0, -1):
            t = self.dec[str(i)](fused) if str(i) in self.dec else fused
            vertical = self.up[str(i)](t)
            if self.debug_shapes:
                self._assert_level(vertical, i - 1, n, h, w)
            fused = self.fuse[str(i - 1)](self._lateral(i - 1, feats[i - 1]), vertical)
        return self.conv_out(fused)


def build_tnet(config: TNetConfig, seed: int = 0) -> TNet:
    """Construct a TNet and deterministically initialize its parameters."""
    net = TNet(config)
    init_parameters(net, seed)
    logger.info(
        "built T-Net (scales=%d, trunk_rdbs=%d, base=%d): %d parameters, "
        "level channels %s",
        config.scales,
        config.trunk_rdbs,
        config.base_channels,
        net.parameter_count(),
        config.level_channels(),
    )
    return net
