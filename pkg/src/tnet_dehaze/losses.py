"""Training losses: per-stage smooth L1, per-stage perceptual distance over
a frozen three-level feature extractor, and their weighted sum across all
stages.

Two extractors are supported. ``pretrained-vgg16`` uses the torchvision
classifier's relu1_2/relu2_2/relu3_3 activations and needs downloadable
weights; where those are unavailable it raises ExtractorUnavailableError
and ``fixed-random-pyramid`` (a seeded, frozen conv pyramid with the same
level geometry) keeps the loss functional and deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, DomainError, ExtractorUnavailableError, ShapeError
from .stack import StackOutput

EXTRACTOR_KINDS = ("pretrained-vgg16", "fixed-random-pyramid")


@dataclass(frozen=True)
class FeatureExtractorSpec:
    """Which frozen feature extractor the perceptual loss runs on.

    ``levels`` lists (channels, spatial divisor) for the three tapped
    feature maps; ``seed`` only matters for the fixed-random-pyramid kind.
    """

    kind: str = "fixed-random-pyramid"
    levels: tuple = ((64, 1), (128, 2), (256, 4))
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in EXTRACTOR_KINDS:
            raise ConfigError(
                f"unknown extractor kind {self.kind!r}; choose from {EXTRACTOR_KINDS}"
            )
        if len(self.levels) != 3:
            raise ConfigError(f"exactly 3 feature levels required, got {len(self.levels)}")
        prev_div = 1
        for entry in self.levels:
            channels, divisor = entry
            if channels < 1:
                raise ConfigError(f"level channels must be positive, got {channels}")
            if divisor % prev_div:
                raise ConfigError(
                    f"level divisors must grow by integer factors, got {self.levels}"
                )
            prev_div = divisor


@dataclass(frozen=True)
class LossConfig:
    stages: int
    lambda_weight: float = 0.04
    extractor: FeatureExtractorSpec = FeatureExtractorSpec()

    def __post_init__(self) -> None:
        if self.stages < 1:
            raise ConfigError(f"stages must be >= 1, got {self.stages}")
        if self.lambda_weight < 0:
            raise ConfigError(f"lambda_weight must be >= 0, got {self.lambda_weight}")


class FixedRandomPyramid(nn.Module):
    """Seeded frozen conv pyramid: 3x3 conv + ReLU per level with 2x average
    pooling between levels (pool factors follow the spec divisors). Inputs
    arrive in the [-1, 1] network domain and are mapped to [0, 1]."""

    def __init__(self, spec: FeatureExtractorSpec):
        super().__init__()
        self.spec = spec
        gen = torch.Generator().manual_seed(spec.seed)
        convs = []
        pools = []
        in_ch, prev_div = 3, 1
        for channels, divisor in spec.levels:
            pools.append(divisor // prev_div)
            conv = nn.Conv2d(in_ch, channels, 3, padding=1)
            fan_in = in_ch * 9
            bound = 1.0 / fan_in**0.5
            with torch.no_grad():
                conv.weight.uniform_(-bound, bound, generator=gen)
                conv.bias.zero_()
            convs.append(conv)
            in_ch, prev_div = channels, divisor
        self.convs = nn.ModuleList(convs)
        self.pool_factors = pools
        for p in self.parameters():
            p.requires_grad_(False)

    def features(self, x: torch.Tensor) -> list[torch.Tensor]:
        h = (x + 1.0) / 2.0
        out = []
        for conv, pool in zip(self.convs, self.pool_factors):
            if pool > 1:
                h = F.avg_pool2d(h, pool)
            h = F.relu(conv(h))
            out.append(h)
        return out


class VggFeatureExtractor(nn.Module):
    """relu1_2 / relu2_2 / relu3_3 activations of a pretrained VGG-16,
    frozen. Inputs in [-1, 1] are mapped to [0, 1] and standardized with
    the classifier's published channel statistics."""

    SLICES = ((0, 4), (4, 9), (9, 16))

    def __init__(self, spec: FeatureExtractorSpec):
        super().__init__()
        self.spec = spec
        try:
            from torchvision import models

            vgg = models.vgg16(weights=models.VGG16_Weights.IMAGENET1K_V1)
        except Exception as exc:  # noqa: BLE001 - any load failure means unavailable
            raise ExtractorUnavailableError(
                "pretrained VGG-16 weights are unavailable in this environment "
                f"({exc}); use extractor kind 'fixed-random-pyramid' instead"
            ) from exc
        layers = vgg.features
        self.slices = nn.ModuleList(
            nn.Sequential(*[layers[i] for i in range(a, b)]) for a, b in self.SLICES
        )
        self.register_buffer("mean", torch.tensor([0.485, 0.456, 0.406]).view(1, 3, 1, 1))
        self.register_buffer("std", torch.tensor([0.229, 0.224, 0.225]).view(1, 3, 1, 1))
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()

    def features(self, x: torch.Tensor) -> list[torch.Tensor]:
        h = ((x + 1.0) / 2.0 - self.mean) / self.std
        out = []
        for block in self.slices:
            h = block(h)
            out.append(h)
        return out


def build_extractor(spec: FeatureExtractorSpec) -> nn.Module:
    if spec.kind == "fixed-random-pyramid":
        return FixedRandomPyramid(spec)
    return VggFeatureExtractor(spec)


def smooth_l1_pointwise(e: float) -> float:
    """0.5 e^2 below 1, e - 0.5 from 1 on; continuous with matching slope."""
    if e < 0:
        raise DomainError(f"smooth L1 takes a nonnegative error, got {e}")
    return 0.5 * e * e if e < 1 else e - 0.5


def _smooth_l1(t: torch.Tensor) -> torch.Tensor:
    return torch.where(t < 1, 0.5 * t * t, t - 0.5)


def stage_smooth_l1(pred: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    """Mean over pixels (and batch) of the channel-sum of the smooth L1
    penalty of |pred - gt|; the channel sum is deliberately not averaged."""
    if pred.shape != gt.shape:
        raise ShapeError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(gt.shape)}")
    if pred.dim() != 4 or pred.shape[1] != 3:
        raise ShapeError(f"expected (N, 3, H, W) images, got {tuple(pred.shape)}")
    err = (pred - gt).abs()
    return _smooth_l1(err).sum(dim=1).mean()


def stage_perceptual(pred: torch.Tensor, gt: torch.Tensor, extractor) -> torch.Tensor:
    """Sum over the 3 levels of the squared feature distance, each level
    normalized by its C*H*W and averaged over the batch."""
    if pred.shape != gt.shape:
        raise ShapeError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(gt.shape)}")
    feats_pred = extractor.features(pred)
    feats_gt = extractor.features(gt)
    total = None
    for fp, fg in zip(feats_pred, feats_gt):
        c, h, w = fp.shape[1], fp.shape[2], fp.shape[3]
        term = ((fp - fg) ** 2).flatten(1).sum(dim=1).mean() / (c * h * w)
        total = term if total is None else total + term
    return total


def total_loss(
    stack_out: StackOutput,
    gt: torch.Tensor,
    cfg: LossConfig,
    extractor=None,
) -> tuple[torch.Tensor, list[dict]]:
    """Sum of per-stage smooth L1 plus lambda times the per-stage perceptual
    sum; also returns a per-stage breakdown for logging."""
    if len(stack_out) != cfg.stages:
        raise ConfigError(
            f"loss configured for {cfg.stages} stage(s), output has {len(stack_out)}"
        )
    if extractor is None:
        extractor = build_extractor(cfg.extractor)
    sl1_sum = None
    perc_sum = None
    breakdown = []
    for k, pred in enumerate(stack_out.per_stage, start=1):
        sl1 = stage_smooth_l1(pred, gt)
        perc = stage_perceptual(pred, gt, extractor)
        sl1_sum = sl1 if sl1_sum is None else sl1_sum + sl1
        perc_sum = perc if perc_sum is None else perc_sum + perc
        breakdown.append(
            {
                "stage": k,
                "smooth_l1": float(sl1.detach()),
                "perceptual": float(perc.detach()),
            }
        )
    return sl1_sum + cfg.lambda_weight * perc_sum, breakdown
