"""Image carriers and PNG I/O.

Two value domains appear throughout the pipeline: images are stored and
measured in [0, 1] ("unit") and fed to the network in [-1, 1] ("network").
ImageBuffer tracks which domain an array is in so conversions are explicit
and idempotent.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .errors import DomainError

UNIT = "unit"        # storage / metric domain [0, 1]
NETWORK = "network"  # network domain [-1, 1]


@dataclass
class ImageBuffer:
    """An H x W x 3 float image with a declared value domain."""

    data: np.ndarray
    domain: str = UNIT

    def __post_init__(self) -> None:
        if self.domain not in (UNIT, NETWORK):
            raise DomainError(f"unknown image domain {self.domain!r}")
        if self.data.ndim != 3 or self.data.shape[2] != 3:
            raise DomainError(
                f"expected an (H, W, 3) array, got shape {self.data.shape}"
            )
        self.data = np.asarray(self.data, dtype=np.float32)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def to_unit(self) -> "ImageBuffer":
        if self.domain == UNIT:
            return self
        return ImageBuffer((self.data + 1.0) / 2.0, UNIT)

    def to_network(self) -> "ImageBuffer":
        if self.domain == NETWORK:
            return self
        return ImageBuffer(self.data * 2.0 - 1.0, NETWORK)


def load_image(path: str | Path) -> ImageBuffer:
    """Load an 8-bit image file as a unit-domain buffer."""
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
    return ImageBuffer(arr, UNIT)


def save_image(image: ImageBuffer | np.ndarray, path: str | Path) -> None:
    """Write a unit-domain image as 8-bit PNG, clamping to [0, 1] first."""
    if isinstance(image, ImageBuffer):
        arr = image.to_unit().data
    else:
        arr = np.asarray(image, dtype=np.float32)
    quantized = np.rint(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(quantized, mode="RGB").save(path, format="PNG")


def to_network_tensor(image: ImageBuffer) -> torch.Tensor:
    """Convert to a (1, 3, H, W) float32 tensor in the network domain."""
    arr = image.to_network().data
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(2, 0, 1)))[None]


def from_network_tensor(t: torch.Tensor) -> ImageBuffer:
    """Convert a (3, H, W) or (1, 3, H, W) network-domain tensor back."""
    if t.dim() == 4:
        if t.shape[0] != 1:
            raise DomainError("expected a single image, got a batch")
        t = t[0]
    arr = t.detach().cpu().numpy().transpose(1, 2, 0)
    return ImageBuffer(arr, NETWORK)
