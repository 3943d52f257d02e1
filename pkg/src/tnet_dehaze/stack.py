"""Recursive stacking of the backbone.

Each stage re-injects the original degraded image: stage k consumes the
channel concatenation of the stage-0 input with the previous stage's
output (stage 1 therefore sees the input twice) and produces a new
estimate. By default every stage runs the same network, so the parameter
count is independent of the stage count.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .backbone import TNet, TNetConfig, build_tnet
from .errors import ConfigError, ShapeError


@dataclass(frozen=True)
class StackConfig:
    stages: int = 3
    share_parameters: bool = True

    def __post_init__(self) -> None:
        if self.stages < 1:
            raise ConfigError(f"stages must be >= 1, got {self.stages}")


@dataclass
class StackOutput:
    """All stage outputs, in order, in the [-1, 1] network domain."""

    per_stage: list[torch.Tensor]

    @property
    def final(self) -> torch.Tensor:
        return self.per_stage[-1]

    def __len__(self) -> int:
        return len(self.per_stage)


def _check_stage_input(net: TNet, x0: torch.Tensor) -> None:
    if x0.dim() != 4:
        raise ShapeError(f"expected a (N, C, H, W) input, got {tuple(x0.shape)}")
    if 2 * x0.shape[1] != net.config.in_channels:
        raise ConfigError(
            f"stacking concatenates the input with the previous output, so the "
            f"backbone needs {2 * x0.shape[1]} input channels for a "
            f"{x0.shape[1]}-channel image; it was built with {net.config.in_channels}"
        )


def stack_forward(net: TNet, x0: torch.Tensor, stages: int) -> StackOutput:
    """Run ``stages`` recursions of ``net`` on ``x0`` and collect every output."""
    if stages < 1:
        raise ConfigError(f"stages must be >= 1, got {stages}")
    _check_stage_input(net, x0)
    outputs: list[torch.Tensor] = []
    y = x0
    for k in range(1, stages + 1):
        xk = torch.cat((x0, y), dim=1)
        try:
            y = net(xk)
        except ShapeError as exc:
            raise ShapeError(f"stage {k}: {exc}") from exc
        outputs.append(y)
    return StackOutput(outputs)


class StackTNet(nn.Module):
    """A backbone plus a stage count; ``forward`` returns all stage outputs.

    With share_parameters=False each stage gets its own backbone (seeded
    seed, seed+1, ...); this is an experimentation path, not the default.
    """

    def __init__(self, config: TNetConfig, stack: StackConfig, seed: int = 0):
        super().__init__()
        if config.in_channels != 2 * config.out_channels:
            raise ConfigError(
                "stacking needs in_channels == 2 * out_channels "
                f"(got {config.in_channels} vs {config.out_channels})"
            )
        self.config = config
        self.stack = stack
        if stack.share_parameters:
            self.tnet = build_tnet(config, seed)
        else:
            self.tnets = nn.ModuleList(
                build_tnet(config, seed + k) for k in range(stack.stages)
            )

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def forward(self, x0: torch.Tensor, stages: int | None = None) -> StackOutput:
        k = self.stack.stages if stages is None else stages
        if self.stack.share_parameters:
            return stack_forward(self.tnet, x0, k)
        if k > len(self.tnets):
            raise ConfigError(
                f"unshared stack holds {len(self.tnets)} stage networks, "
                f"cannot run {k} stages"
            )
        if k < 1:
            raise ConfigError(f"stages must be >= 1, got {k}")
        _check_stage_input(self.tnets[0], x0)
        outputs: list[torch.Tensor] = []
        y = x0
        for idx in range(k):
            xk = torch.cat((x0, y), dim=1)
            try:
                y = self.tnets[idx](xk)
            except ShapeError as exc:
                raise ShapeError(f"stage {idx + 1}: {exc}") from exc
            outputs.append(y)
        return StackOutput(outputs)
