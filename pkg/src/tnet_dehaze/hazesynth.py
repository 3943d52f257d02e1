"""Synthetic haze from the atmospheric scattering model.

A hazy observation is I = J*t + A*(1-t) with transmission t = exp(-beta_s*d)
for a relative depth map d in [0, 1], scattering coefficient beta_s and
airlight A. The module generates procedural depth maps and clean images,
applies the forward model, inverts it analytically (the test oracle), and
writes paired datasets with a JSONL manifest carrying every parameter
needed to re-verify the model beyond 8-bit quantization.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import ConfigError, DomainError, ShapeError
from .images import ImageBuffer, load_image, save_image

DEPTH_KINDS = ("ramp", "radial", "smooth-noise")
DEFAULT_BETA_RANGE = (0.4, 1.6)
DEFAULT_AIRLIGHT_RANGE = (0.7, 1.0)
T_MIN = 0.05

_IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")


@dataclass
class HazeSample:
    """A (clean, hazy) pair and the parameters that generated it."""

    clean: ImageBuffer
    hazy: ImageBuffer
    depth: np.ndarray
    beta_s: float
    airlight: float | np.ndarray

    def __post_init__(self) -> None:
        if self.beta_s <= 0:
            raise DomainError(f"beta_s must be positive, got {self.beta_s}")
        a = np.asarray(self.airlight, dtype=np.float64)
        if np.any(a <= 0) or np.any(a > 1):
            raise DomainError(f"airlight must lie in (0, 1], got {self.airlight}")
        if self.depth.shape != (self.clean.height, self.clean.width):
            raise ShapeError(
                f"depth shape {self.depth.shape} does not match image "
                f"{(self.clean.height, self.clean.width)}"
            )


def transmission_from_depth(depth: np.ndarray, beta_s: float) -> np.ndarray:
    """t = exp(-beta_s * depth), elementwise."""
    depth = np.asarray(depth, dtype=np.float64)
    if np.any(depth < 0):
        raise DomainError("depth must be nonnegative")
    if beta_s <= 0:
        raise DomainError(f"beta_s must be positive, got {beta_s}")
    return np.exp(-beta_s * depth)


def _unit_array(image: ImageBuffer | np.ndarray, what: str) -> np.ndarray:
    if isinstance(image, ImageBuffer):
        arr = image.to_unit().data
    else:
        arr = np.asarray(image, dtype=np.float32)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ShapeError(f"{what} must be (H, W, 3), got {arr.shape}")
    if arr.min() < -1e-6 or arr.max() > 1 + 1e-6:
        raise DomainError(f"{what} must lie in [0, 1]")
    return arr


def _airlight_value(airlight) -> np.ndarray:
    a = np.asarray(airlight, dtype=np.float64)
    if a.ndim not in (0, 1) or (a.ndim == 1 and a.shape[0] != 3):
        raise DomainError("airlight must be a scalar or a 3-vector")
    if np.any(a <= 0) or np.any(a > 1):
        raise DomainError(f"airlight must lie in (0, 1], got {airlight}")
    return a


def apply_haze(clean, depth: np.ndarray, beta_s: float, airlight) -> HazeSample:
    """Run the scattering model forward; output stays in [0, 1] because it
    is a convex combination of the clean image and the airlight."""
    j = _unit_array(clean, "clean image").astype(np.float64)
    a = _airlight_value(airlight)
    t = transmission_from_depth(depth, beta_s)
    if t.shape != j.shape[:2]:
        raise ShapeError(f"depth shape {t.shape} does not match image {j.shape[:2]}")
    t3 = t[..., None]
    hazy = j * t3 + a * (1.0 - t3)
    return HazeSample(
        clean=ImageBuffer(j.astype(np.float32)),
        hazy=ImageBuffer(hazy.astype(np.float32)),
        depth=np.asarray(depth, dtype=np.float64),
        beta_s=float(beta_s),
        airlight=airlight if np.ndim(airlight) else float(airlight),
    )


def invert_haze(
    hazy,
    depth: np.ndarray,
    beta_s: float,
    airlight,
    t_min: float = T_MIN,
) -> tuple[np.ndarray, np.ndarray]:
    """Analytic inverse J = (I - A*(1-t)) / t, clamped to [0, 1].

    Pixels with t below ``t_min`` are not divided: they keep the hazy value
    and are reported in the returned boolean mask.
    """
    i = _unit_array(hazy, "hazy image").astype(np.float64)
    a = _airlight_value(airlight)
    t = transmission_from_depth(depth, beta_s)
    if t.shape != i.shape[:2]:
        raise ShapeError(f"depth shape {t.shape} does not match image {i.shape[:2]}")
    flagged = t < t_min
    t3 = np.where(flagged, 1.0, t)[..., None]
    estimate = (i - a * (1.0 - t[..., None])) / t3
    estimate = np.where(flagged[..., None], i, estimate)
    return np.clip(estimate, 0.0, 1.0), flagged


def make_depth(kind: str, height: int, width: int, seed=0, *, center=None) -> np.ndarray:
    """Procedural relative depth in [0, 1], deterministic per seed.

    ramp: linear gradient across one axis (seeded orientation);
    radial: normalized distance from a seeded (or given) center point;
    smooth-noise: low-frequency random field, min-max normalized.
    """
    if height < 1 or width < 1:
        raise DomainError(f"depth map needs positive dims, got {height}x{width}")
    rng = np.random.default_rng(seed)
    if kind == "ramp":
        orientation = int(rng.integers(4))
        axis_len = width if orientation < 2 else height
        line = np.linspace(0.0, 1.0, axis_len)
        if orientation % 2:
            line = line[::-1]
        if orientation < 2:
            return np.tile(line, (height, 1))
        return np.tile(line[:, None], (1, width))
    if kind == "radial":
        if center is None:
            center = (rng.uniform(0, height - 1), rng.uniform(0, width - 1))
        cy, cx = center
        yy, xx = np.mgrid[0:height, 0:width]
        dist = np.hypot(yy - cy, xx - cx)
        top = dist.max()
        return dist / top if top > 0 else np.zeros((height, width))
    if kind == "smooth-noise":
        grid = 5
        coarse = rng.standard_normal((grid, grid))
        yy, xx = np.mgrid[0:height, 0:width]
        coords = np.stack(
            [
                yy * ((grid - 1) / max(height - 1, 1)),
                xx * ((grid - 1) / max(width - 1, 1)),
            ]
        )
        field = ndimage.map_coordinates(coarse, coords, order=3, mode="nearest")
        lo, hi = field.min(), field.max()
        return (field - lo) / (hi - lo) if hi > lo else np.zeros((height, width))
    raise ConfigError(f"unknown depth kind {kind!r}; choose from {DEPTH_KINDS}")


def make_clean_image(height: int, width: int, seed=0) -> ImageBuffer:
    """Procedural haze-free test/demo image: a smooth color field with a few
    solid shapes and light grain, kept inside [0, 1] with headroom."""
    if height < 1 or width < 1:
        raise DomainError(f"image needs positive dims, got {height}x{width}")
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:height, 0:width]
    grid = 4
    coords = np.stack(
        [
            yy * ((grid - 1) / max(height - 1, 1)),
            xx * ((grid - 1) / max(width - 1, 1)),
        ]
    )
    channels = []
    for _ in range(3):
        coarse = rng.standard_normal((grid, grid))
        field = ndimage.map_coordinates(coarse, coords, order=3, mode="nearest")
        lo, hi = field.min(), field.max()
        field = (field - lo) / (hi - lo) if hi > lo else np.full_like(field, 0.5)
        channels.append(0.15 + 0.7 * field)
    img = np.stack(channels, axis=-1)

    for _ in range(6):
        color = rng.uniform(0.08, 0.92, size=3)
        opacity = rng.uniform(0.6, 1.0)
        if rng.random() < 0.5:
            h = int(rng.integers(max(height // 8, 1), max(height // 2, 2)))
            w = int(rng.integers(max(width // 8, 1), max(width // 2, 2)))
            y0 = int(rng.integers(0, max(height - h, 1)))
            x0 = int(rng.integers(0, max(width - w, 1)))
            region = img[y0 : y0 + h, x0 : x0 + w]
            img[y0 : y0 + h, x0 : x0 + w] = opacity * color + (1 - opacity) * region
        else:
            cy = rng.uniform(0, height - 1)
            cx = rng.uniform(0, width - 1)
            radius = rng.uniform(min(height, width) / 10, min(height, width) / 3)
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= radius**2
            img[mask] = opacity * color + (1 - opacity) * img[mask]

    img += rng.normal(0.0, 0.015, size=img.shape)
    return ImageBuffer(np.clip(img, 0.0, 1.0).astype(np.float32))


def _check_range(name: str, value, lo_ok, hi_ok) -> tuple[float, float]:
    try:
        lo, hi = float(value[0]), float(value[1])
    except (TypeError, ValueError, IndexError) as exc:
        raise ConfigError(f"{name} must be a (low, high) pair, got {value!r}") from exc
    if lo > hi:
        raise ConfigError(f"{name} is inverted: {lo} > {hi}")
    if not (lo_ok(lo) and hi_ok(hi)):
        raise ConfigError(f"{name} out of domain: ({lo}, {hi})")
    return lo, hi


def build_dataset(
    clean_dir,
    out_dir,
    count: int,
    beta_range=DEFAULT_BETA_RANGE,
    airlight_range=DEFAULT_AIRLIGHT_RANGE,
    depth_kinds=DEPTH_KINDS,
    seed: int = 0,
    crop: int | None = None,
) -> Path:
    """Write ``count`` (clean, hazy) PNG pairs plus a JSONL manifest.

    Sources are cycled in sorted order; per-sample parameters derive from
    (seed, index) alone, so reruns are byte-identical. Image paths in the
    manifest are relative to its directory. Returns the manifest path.
    """
    clean_dir, out_dir = Path(clean_dir), Path(out_dir)
    beta_lo, beta_hi = _check_range(
        "beta-range", beta_range, lambda v: v > 0, lambda v: v > 0
    )
    air_lo, air_hi = _check_range(
        "airlight-range", airlight_range, lambda v: 0 < v <= 1, lambda v: 0 < v <= 1
    )
    if count < 1:
        raise ConfigError(f"count must be >= 1, got {count}")
    kinds = tuple(depth_kinds)
    if not kinds:
        raise ConfigError("depth_kinds must not be empty")
    for kind in kinds:
        if kind not in DEPTH_KINDS:
            raise ConfigError(f"unknown depth kind {kind!r}; choose from {DEPTH_KINDS}")
    sources = sorted(
        p for p in clean_dir.iterdir() if p.suffix.lower() in _IMAGE_SUFFIXES
    ) if clean_dir.is_dir() else []
    if not sources:
        raise ConfigError(f"no images found in {clean_dir}")

    out_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for index in range(count):
        rng = np.random.default_rng([seed, index])
        src = load_image(sources[index % len(sources)]).data
        h, w = src.shape[:2]
        crop_h = crop if crop else h
        crop_w = crop if crop else w
        if crop_h > h or crop_w > w:
            raise ConfigError(
                f"crop {crop} exceeds source size {h}x{w} ({sources[index % len(sources)]})"
            )
        cy = int(rng.integers(0, h - crop_h + 1))
        cx = int(rng.integers(0, w - crop_w + 1))
        patch = src[cy : cy + crop_h, cx : cx + crop_w]

        kind = kinds[index % len(kinds)]
        depth_seed = int(rng.integers(0, 2**31 - 1))
        depth = make_depth(kind, crop_h, crop_w, depth_seed)
        beta_s = float(rng.uniform(beta_lo, beta_hi))
        airlight = float(rng.uniform(air_lo, air_hi))
        sample = apply_haze(patch, depth, beta_s, airlight)

        clean_name = f"{index:05d}_clean.png"
        hazy_name = f"{index:05d}_hazy.png"
        save_image(sample.clean, out_dir / clean_name)
        save_image(sample.hazy, out_dir / hazy_name)
        records.append(
            {
                "index": index,
                "clean_path": clean_name,
                "hazy_path": hazy_name,
                "depth_kind": kind,
                "beta_s": beta_s,
                "airlight": airlight,
                "seed": depth_seed,
                "crop_x": cx,
                "crop_y": cy,
                "crop_w": crop_w,
                "crop_h": crop_h,
            }
        )

    manifest = out_dir / "manifest.jsonl"
    with open(manifest, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return manifest


def read_manifest(path) -> list[dict]:
    path = Path(path)
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    if not records:
        raise ConfigError(f"manifest {path} is empty")
    return records
