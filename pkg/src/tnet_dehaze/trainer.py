"""Training orchestration: deterministic data pipeline, Adam with the
halving LR schedule, per-epoch held-out evaluation, best/last checkpoints.

Every random decision (shuffle order, crop offsets, flips) derives from
(seed, epoch, sample index) alone, so a run resumed from its last
checkpoint continues bit-identically to an uninterrupted one.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from .backbone import TNetConfig
from .checkpoint import configs_to_dict, load_checkpoint, save_checkpoint
from .errors import ConfigError, ShapeError, TrainingDiverged
from .images import ImageBuffer, from_network_tensor, load_image, to_network_tensor
from .hazesynth import read_manifest
from .losses import LossConfig, build_extractor, total_loss
from .metrics import psnr, ssim
from .stack import StackConfig, StackTNet

logger = logging.getLogger("tnet_dehaze")


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings. Defaults are the full-scale values; ``desk()``
    gives the scaled-down preset used throughout the test suite."""

    batch_size: int = 14
    epochs: int = 2000
    lr0: float = 1e-3
    halve_every: int = 20
    lr_floor_epoch: int = 80
    lr_floor: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    crop: int = 256
    flip: bool = True
    seed: int = 0
    stages: int | None = None  # None defers to StackConfig

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.crop < 1:
            raise ConfigError(f"crop must be >= 1, got {self.crop}")
        if self.lr0 <= 0 or self.lr_floor <= 0:
            raise ConfigError("learning rates must be positive")
        if self.halve_every < 1 or self.lr_floor_epoch < 0:
            raise ConfigError("schedule epochs must be positive")
        if self.stages is not None and self.stages < 1:
            raise ConfigError(f"stages must be >= 1, got {self.stages}")

    @classmethod
    def desk(cls, **overrides) -> "TrainConfig":
        values = {"epochs": 60, "crop": 64}
        values.update(overrides)
        return cls(**values)


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """lr0 halved every ``halve_every`` epochs, pinned to the floor from
    ``lr_floor_epoch`` on."""
    if epoch < 0:
        raise ConfigError(f"epoch must be >= 0, got {epoch}")
    if epoch >= cfg.lr_floor_epoch:
        return cfg.lr_floor
    return cfg.lr0 * 0.5 ** (epoch // cfg.halve_every)


def augment(pair, seed, crop: int, flip: bool = True) -> tuple[ImageBuffer, ImageBuffer]:
    """Shared random crop and horizontal flip, then map both images to the
    [-1, 1] network domain. The same seed always gives the same window."""
    hazy, clean = pair
    hz = hazy.to_unit().data
    cl = clean.to_unit().data
    if hz.shape != cl.shape:
        raise ShapeError(f"pair shapes differ: {hz.shape} vs {cl.shape}")
    h, w = hz.shape[:2]
    if h < crop or w < crop:
        raise ShapeError(f"image {h}x{w} is smaller than the {crop}x{crop} crop")
    rng = np.random.default_rng(seed)
    oy = int(rng.integers(0, h - crop + 1))
    ox = int(rng.integers(0, w - crop + 1))
    do_flip = bool(flip) and rng.random() < 0.5
    hz = hz[oy : oy + crop, ox : ox + crop]
    cl = cl[oy : oy + crop, ox : ox + crop]
    if do_flip:
        hz = hz[:, ::-1]
        cl = cl[:, ::-1]
    unit = lambda a: ImageBuffer(np.ascontiguousarray(a))  # noqa: E731
    return unit(hz).to_network(), unit(cl).to_network()


def held_out_split(n: int, fraction: float = 0.1) -> tuple[list[int], list[int]]:
    """Deterministic (train, held_out) index split: the floor(fraction*n)
    indices with the smallest sha256(index) digests are held out."""
    k = math.floor(fraction * n)
    ranked = sorted(range(n), key=lambda i: hashlib.sha256(str(i).encode()).hexdigest())
    held = sorted(ranked[:k])
    train = sorted(set(range(n)) - set(held))
    return train, held


@dataclass
class TrainResult:
    best_path: Path
    last_path: Path
    log_path: Path
    records: list = field(repr=False)
    best_psnr: float
    final_psnr: float
    final_ssim: float
    baseline_psnr: float
    epochs_run: int
    model: StackTNet = field(repr=False)


def _dehazed_unit(model: StackTNet, hazy: ImageBuffer) -> np.ndarray:
    x0 = to_network_tensor(hazy)
    out = model(x0).final
    return np.clip(from_network_tensor(out).to_unit().data, 0.0, 1.0)


def _evaluate(model: StackTNet, pairs, indices) -> tuple[float, float]:
    model.eval()
    psnrs, ssims = [], []
    with torch.no_grad():
        for idx in indices:
            hazy, clean = pairs[idx]
            dehazed = _dehazed_unit(model, hazy)
            psnrs.append(psnr(dehazed, clean.data))
            ssims.append(ssim(dehazed, clean.data))
    model.train()
    return float(np.mean(psnrs)), float(np.mean(ssims))


def train(
    manifest_path,
    out_dir,
    train_cfg: TrainConfig | None = None,
    tnet_cfg: TNetConfig | None = None,
    stack_cfg: StackConfig | None = None,
    loss_cfg: LossConfig | None = None,
    resume=None,
) -> TrainResult:
    """Run the optimization loop over a synthesized dataset manifest.

    With ``resume`` pointing at a previous checkpoint, the architecture and
    loss configs are taken from its header (a provided train config may only
    change ``epochs``), and training continues from its epoch counter.
    """
    torch.set_num_threads(1)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    start_epoch = 0
    best: dict | None = None
    ck = None
    if resume is not None:
        ck = load_checkpoint(resume)
        tnet_cfg = ck.tnet_config()
        stack_cfg = ck.stack_config()
        loss_cfg = ck.loss_config()
        ck_train = TrainConfig(**ck.config["train"])
        if train_cfg is None:
            train_cfg = ck_train
        elif replace(train_cfg, epochs=ck_train.epochs) != ck_train:
            raise ConfigError(
                "resume requires the checkpoint's training config (only epochs "
                "may change)"
            )
        start_epoch = ck.epoch
        best = ck.best
    else:
        train_cfg = train_cfg or TrainConfig.desk()
        tnet_cfg = tnet_cfg or TNetConfig()
        stack_cfg = stack_cfg or StackConfig()
        loss_cfg = loss_cfg or LossConfig(stages=stack_cfg.stages)

    stages = stack_cfg.stages
    if train_cfg.stages is not None and train_cfg.stages != stages:
        raise ConfigError(
            f"train config says {train_cfg.stages} stage(s) but the stack config "
            f"says {stages}"
        )
    if loss_cfg.stages != stages:
        raise ConfigError(
            f"loss config covers {loss_cfg.stages} stage(s) but the stack runs {stages}"
        )
    if train_cfg.crop % 2**tnet_cfg.scales:
        raise ConfigError(
            f"crop {train_cfg.crop} must be divisible by 2^scales = {2**tnet_cfg.scales}"
        )

    manifest_path = Path(manifest_path)
    records_in = read_manifest(manifest_path)
    base = manifest_path.parent
    pairs = [
        (load_image(base / rec["hazy_path"]), load_image(base / rec["clean_path"]))
        for rec in records_in
    ]
    train_idx, held_idx = held_out_split(len(pairs))
    eval_idx = held_idx if held_idx else train_idx
    if held_idx:
        eval_kind = "held-out"
    else:
        eval_kind = "training (held-out split is empty at this dataset size)"

    model = StackTNet(tnet_cfg, stack_cfg, seed=train_cfg.seed)
    extractor = build_extractor(loss_cfg.extractor)
    optimizer = torch.optim.Adam(
        model.parameters(),
        lr=lr_at(min(start_epoch, max(train_cfg.epochs - 1, 0)), train_cfg),
        betas=(train_cfg.adam_beta1, train_cfg.adam_beta2),
    )
    if ck is not None:
        ck.load_into(model)
        ck.restore_optimizer(optimizer, model)

    config_echo = configs_to_dict(tnet_cfg, stack_cfg, train_cfg, loss_cfg)
    baseline_psnr = float(
        np.mean([psnr(pairs[i][0].data, pairs[i][1].data) for i in eval_idx])
    )
    logger.info(
        "training on %d pairs (%d train / %d eval, %s eval set); hazy baseline "
        "PSNR %.3f dB",
        len(pairs),
        len(train_idx),
        len(eval_idx),
        eval_kind,
        baseline_psnr,
    )

    records: list[dict] = []
    best_path = out_dir / "best.ckpt"
    last_path = out_dir / "last.ckpt"
    eval_psnr = eval_ssim = None

    for epoch in range(start_epoch, train_cfg.epochs):
        lr = lr_at(epoch, train_cfg)
        for group in optimizer.param_groups:
            group["lr"] = lr
        order = np.random.default_rng([train_cfg.seed, 1000003, epoch]).permutation(
            len(train_idx)
        )
        epoch_order = [train_idx[i] for i in order]
        loss_sum = 0.0
        steps = 0
        for lo in range(0, len(epoch_order), train_cfg.batch_size):
            batch = epoch_order[lo : lo + train_cfg.batch_size]
            hazy_ts, clean_ts = [], []
            for idx in batch:
                hz, cl = augment(
                    pairs[idx],
                    [train_cfg.seed, epoch, idx],
                    crop=train_cfg.crop,
                    flip=train_cfg.flip,
                )
                hazy_ts.append(to_network_tensor(hz))
                clean_ts.append(to_network_tensor(cl))
            x0 = torch.cat(hazy_ts)
            gt = torch.cat(clean_ts)
            out = model(x0)
            loss, breakdown = total_loss(out, gt, loss_cfg, extractor)
            loss_value = float(loss.detach())
            if not torch.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite loss {loss_value} at epoch {epoch} step {steps}"
                )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            records.append(
                {
                    "kind": "step",
                    "epoch": epoch,
                    "step": steps,
                    "lr": lr,
                    "total": loss_value,
                    "stages": breakdown,
                }
            )
            loss_sum += loss_value
            steps += 1

        eval_psnr, eval_ssim = _evaluate(model, pairs, eval_idx)
        if best is None or eval_psnr > best["psnr"]:
            best = {"psnr": eval_psnr, "epoch": epoch + 1}
            save_checkpoint(
                best_path,
                model,
                config=config_echo,
                seed=train_cfg.seed,
                epoch=epoch + 1,
                best=best,
                optimizer=optimizer,
            )
        save_checkpoint(
            last_path,
            model,
            config=config_echo,
            seed=train_cfg.seed,
            epoch=epoch + 1,
            best=best,
            optimizer=optimizer,
        )
        records.append(
            {
                "kind": "epoch",
                "epoch": epoch,
                "lr": lr,
                "mean_total": loss_sum / max(steps, 1),
                "eval_psnr": eval_psnr,
                "eval_ssim": eval_ssim,
                "best_psnr": best["psnr"],
                "baseline_psnr": baseline_psnr,
            }
        )
        logger.info(
            "epoch %d: lr %.2e, mean loss %.5f, eval PSNR %.3f dB (best %.3f)",
            epoch,
            lr,
            loss_sum / max(steps, 1),
            eval_psnr,
            best["psnr"],
        )

    if eval_psnr is None:  # nothing ran (resume already at target epochs)
        eval_psnr, eval_ssim = _evaluate(model, pairs, eval_idx)
        if best is None:
            best = {"psnr": eval_psnr, "epoch": start_epoch}
    if not last_path.exists():
        save_checkpoint(
            last_path,
            model,
            config=config_echo,
            seed=train_cfg.seed,
            epoch=train_cfg.epochs,
            best=best,
            optimizer=optimizer,
        )
        if not best_path.exists():
            save_checkpoint(
                best_path,
                model,
                config=config_echo,
                seed=train_cfg.seed,
                epoch=train_cfg.epochs,
                best=best,
                optimizer=optimizer,
            )

    log_path = out_dir / "train_log.jsonl"
    with open(log_path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")

    return TrainResult(
        best_path=best_path,
        last_path=last_path,
        log_path=log_path,
        records=records,
        best_psnr=best["psnr"],
        final_psnr=eval_psnr,
        final_ssim=eval_ssim,
        baseline_psnr=baseline_psnr,
        epochs_run=train_cfg.epochs - start_epoch,
        model=model,
    )
