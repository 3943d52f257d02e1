"""PSNR and SSIM on [0, 1] images; the evaluation contract for every test.

PSNR is 10*log10(1/MSE) over all pixels and channels, reported as the cap
value 99.0 dB for (near-)identical inputs. SSIM is the standard
single-scale index with an 11x11 Gaussian window (sigma 1.5), K1=0.01,
K2=0.03, dynamic range 1.0, computed per channel over the valid (border
cropped) region and averaged.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import correlate1d

from .errors import ShapeError
from .images import ImageBuffer

PSNR_CAP = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
_K1, _K2 = 0.01, 0.03


def _as_array(image) -> np.ndarray:
    if isinstance(image, ImageBuffer):
        return image.to_unit().data.astype(np.float64)
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[..., None]
    if arr.ndim != 3:
        raise ShapeError(f"expected an (H, W[, C]) image, got shape {arr.shape}")
    return arr


def psnr(pred, gt) -> float:
    """Peak signal-to-noise ratio in dB for unit-range images."""
    p, g = _as_array(pred), _as_array(gt)
    if p.shape != g.shape:
        raise ShapeError(f"shape mismatch: {p.shape} vs {g.shape}")
    mse = float(np.mean((p - g) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(10.0 * np.log10(1.0 / mse), PSNR_CAP)


def _gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    offsets = np.arange(size, dtype=np.float64) - (size - 1) / 2
    w = np.exp(-(offsets**2) / (2 * sigma**2))
    return w / w.sum()


def ssim(pred, gt) -> float:
    """Mean structural similarity over the valid region, channel averaged."""
    p, g = _as_array(pred), _as_array(gt)
    if p.shape != g.shape:
        raise ShapeError(f"shape mismatch: {p.shape} vs {g.shape}")
    h, w = p.shape[:2]
    if min(h, w) < SSIM_WINDOW:
        raise ShapeError(
            f"image {h}x{w} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        )
    win = _gaussian_window()
    radius = SSIM_WINDOW // 2
    c1 = _K1**2
    c2 = _K2**2

    def filt(a: np.ndarray) -> np.ndarray:
        out = correlate1d(a, win, axis=0, mode="constant")
        out = correlate1d(out, win, axis=1, mode="constant")
        return out[radius:-radius, radius:-radius]

    values = []
    for c in range(p.shape[2]):
        x, y = p[..., c], g[..., c]
        mx, my = filt(x), filt(y)
        sxx = filt(x * x) - mx * mx
        syy = filt(y * y) - my * my
        sxy = filt(x * y) - mx * my
        num = (2 * mx * my + c1) * (2 * sxy + c2)
        den = (mx * mx + my * my + c1) * (sxx + syy + c2)
        values.append(np.mean(num / den))
    return float(np.mean(values))


@dataclass
class ImageScore:
    name: str
    psnr_db: float
    ssim: float


@dataclass
class MetricReport:
    per_image: list[ImageScore] = field(default_factory=list)

    @property
    def count(self) -> int:
        return len(self.per_image)

    @property
    def mean_psnr(self) -> float:
        return float(np.mean([s.psnr_db for s in self.per_image]))

    @property
    def mean_ssim(self) -> float:
        return float(np.mean([s.ssim for s in self.per_image]))

    def table(self) -> str:
        width = max([len(s.name) for s in self.per_image] + [4])
        lines = [f"{'name':<{width}}  {'psnr_db':>8}  {'ssim':>7}"]
        for s in self.per_image:
            lines.append(f"{s.name:<{width}}  {s.psnr_db:8.3f}  {s.ssim:7.4f}")
        lines.append(
            f"{'mean':<{width}}  {self.mean_psnr:8.3f}  {self.mean_ssim:7.4f}"
            f"  (n={self.count})"
        )
        return "\n".join(lines)

    def to_csv(self, path) -> Path:
        """Per-image rows plus one aggregate row named ``mean``."""
        path = Path(path)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["name", "psnr_db", "ssim"])
            for s in self.per_image:
                writer.writerow([s.name, repr(s.psnr_db), repr(s.ssim)])
            writer.writerow(["mean", repr(self.mean_psnr), repr(self.mean_ssim)])
        return path


def evaluate_pairs(pairs) -> MetricReport:
    """Score an iterable of (name, pred, gt) triples."""
    report = MetricReport()
    for name, pred, gt in pairs:
        report.per_image.append(ImageScore(name, psnr(pred, gt), ssim(pred, gt)))
    return report
