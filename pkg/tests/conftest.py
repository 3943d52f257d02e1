"""Shared test oracles: straight-line scalar convolution references,
central finite differences, and deterministic image factories.

The conv references are deliberately naive nested loops over numpy float64
so they cannot share a code path (or a bug) with the framework kernels
they check.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest
import torch

torch.set_num_threads(1)


# ---------------------------------------------------------------- references


def conv2d_ref(x, w, b, stride=1, padding=0):
    """Scalar-loop 2-D cross-correlation, NCHW x (Cout, Cin, kh, kw)."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    b = np.zeros(w.shape[0]) if b is None else np.asarray(b, dtype=np.float64)
    n, cin, h, wd = x.shape
    cout, cin_w, kh, kw = w.shape
    assert cin == cin_w
    xp = np.zeros((n, cin, h + 2 * padding, wd + 2 * padding))
    xp[:, :, padding : padding + h, padding : padding + wd] = x
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    out = np.zeros((n, cout, ho, wo))
    for ni in range(n):
        for co in range(cout):
            for i in range(ho):
                for j in range(wo):
                    acc = b[co]
                    for ci in range(cin):
                        for u in range(kh):
                            for v in range(kw):
                                acc += (
                                    xp[ni, ci, i * stride + u, j * stride + v]
                                    * w[co, ci, u, v]
                                )
                    out[ni, co, i, j] = acc
    return out


def conv_transpose2d_ref(x, w, b, stride=2, padding=1):
    """Scalar-loop transposed conv, weights shaped (Cin, Cout, kh, kw)."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    n, cin, h, wd = x.shape
    cin_w, cout, kh, kw = w.shape
    assert cin == cin_w
    b = np.zeros(cout) if b is None else np.asarray(b, dtype=np.float64)
    ho = (h - 1) * stride - 2 * padding + kh
    wo = (wd - 1) * stride - 2 * padding + kw
    out = np.zeros((n, cout, ho, wo))
    for ni in range(n):
        for ci in range(cin):
            for i in range(h):
                for j in range(wd):
                    for co in range(cout):
                        for u in range(kh):
                            for v in range(kw):
                                oi = i * stride + u - padding
                                oj = j * stride + v - padding
                                if 0 <= oi < ho and 0 <= oj < wo:
                                    out[ni, co, oi, oj] += x[ni, ci, i, j] * w[ci, co, u, v]
    out += b[None, :, None, None]
    return out


def relu_ref(x):
    return np.maximum(x, 0.0)


def avg_pool_ref(x, k):
    n, c, h, w = x.shape
    out = np.zeros((n, c, h // k, w // k))
    for i in range(h // k):
        for j in range(w // k):
            out[:, :, i, j] = x[:, :, i * k : (i + 1) * k, j * k : (j + 1) * k].mean(
                axis=(2, 3)
            )
    return out


# --------------------------------------------------------- finite differences


def finite_difference(f, x, h=1e-5):
    """Central-difference gradient of scalar f at x (torch double tensor)."""
    grad = torch.zeros_like(x)
    with torch.no_grad():
        flat = x.reshape(-1)
        gflat = grad.reshape(-1)
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + h
            hi = float(f(x))
            flat[i] = orig - h
            lo = float(f(x))
            flat[i] = orig
            gflat[i] = (hi - lo) / (2 * h)
    return grad


def grad_rel_err(analytic: torch.Tensor, numeric: torch.Tensor) -> float:
    """Infinity-norm relative error between two gradients."""
    a = analytic.detach().double()
    n = numeric.detach().double()
    scale = max(a.abs().max().item(), n.abs().max().item(), 1e-12)
    return (a - n).abs().max().item() / scale


def sample_coords(shape, count, seed):
    """A deterministic subset of flat indices into a tensor of ``shape``."""
    total = int(np.prod(shape))
    if total <= count:
        return list(range(total))
    rng = np.random.default_rng(seed)
    return sorted(rng.choice(total, size=count, replace=False).tolist())


def finite_difference_at(f, x, coords, h=1e-5):
    """Central differences only at the given flat coordinates of x."""
    out = []
    with torch.no_grad():
        flat = x.reshape(-1)
        for i in coords:
            orig = flat[i].item()
            flat[i] = orig + h
            hi = float(f())
            flat[i] = orig - h
            lo = float(f())
            flat[i] = orig
            out.append((hi - lo) / (2 * h))
    return torch.tensor(out, dtype=torch.float64)


# ------------------------------------------------------------------ fixtures


@pytest.fixture
def rng():
    return np.random.default_rng(20260814)


def random_feature(shape, seed=0, dtype=torch.float32):
    gen = torch.Generator().manual_seed(seed)
    return torch.randn(*shape, generator=gen, dtype=torch.float64).to(dtype)


def random_unit_image(height, width, seed=0):
    return np.random.default_rng(seed).uniform(0.0, 1.0, (height, width, 3))


def write_twenty_db_pair(gt_dir, pred_dir, name="fixture.png", seed=0):
    """Write an 8-bit PNG pair whose PSNR is exactly 20.000 dB.

    Over 204 pixels, 103 channel diffs of 25/255 and 101 of 26/255 give
    mean squared error (103*625 + 101*676) / (204 * 255^2) = 0.01 exactly.
    """
    from PIL import Image

    gt_dir, pred_dir = Path(gt_dir), Path(pred_dir)
    gt_dir.mkdir(parents=True, exist_ok=True)
    pred_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    gt = rng.integers(10, 180, size=(12, 17, 3), dtype=np.uint8)
    diff = np.full(204, 26, dtype=np.uint8)
    diff[:103] = 25
    pred = gt + diff.reshape(12, 17)[..., None]
    Image.fromarray(gt, "RGB").save(gt_dir / name)
    Image.fromarray(pred, "RGB").save(pred_dir / name)
    return gt_dir / name, pred_dir / name
