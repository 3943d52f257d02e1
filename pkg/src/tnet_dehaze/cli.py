"""Command-line front end: synthesize data, train, dehaze images, evaluate.

Exit codes: 0 success, 1 usage/configuration error, 2 runtime failure.
Every command prints its fully resolved configuration (and seed) as its
first output line. Setting TNET_DEHAZE_QUIET=1 suppresses progress logs;
errors always surface.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

import torch
import torch.nn.functional as F

from .backbone import TNetConfig
from .checkpoint import load_checkpoint
from .errors import (
    ConfigError,
    DomainError,
    ShapeError,
    TnetDehazeError,
)
from .hazesynth import (
    DEFAULT_AIRLIGHT_RANGE,
    DEFAULT_BETA_RANGE,
    DEPTH_KINDS,
    build_dataset,
    read_manifest,
)
from .images import from_network_tensor, load_image, save_image, to_network_tensor
from .losses import EXTRACTOR_KINDS, FeatureExtractorSpec, LossConfig
from .metrics import evaluate_pairs
from .report import render_metric_figures, render_training_curves
from .stack import StackConfig
from .trainer import TrainConfig, train

logger = logging.getLogger("tnet_dehaze")

_IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")

_TNET_KEYS = (
    "scales",
    "trunk_rdbs",
    "base_channels",
    "in_channels",
    "out_channels",
    "rdb_growth",
    "rdb_layers",
)
_STACK_KEYS = ("stages", "share_parameters")
_TRAIN_KEYS = (
    "batch_size",
    "epochs",
    "lr0",
    "halve_every",
    "lr_floor_epoch",
    "lr_floor",
    "adam_beta1",
    "adam_beta2",
    "crop",
    "flip",
    "seed",
)
_LOSS_KEYS = ("lambda", "extractor", "extractor_seed")
_ALL_KEYS = _TNET_KEYS + _STACK_KEYS + _TRAIN_KEYS + _LOSS_KEYS


class UsageError(ConfigError):
    """Bad flags, unknown config keys, or unusable paths."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


class _StderrHandler(logging.StreamHandler):
    """Resolves sys.stderr at emit time so redirection keeps working when
    main() is called repeatedly in one process."""

    def __init__(self):
        logging.Handler.__init__(self)

    @property
    def stream(self):
        return sys.stderr


def _configure_logging() -> None:
    quiet = os.environ.get("TNET_DEHAZE_QUIET", "") not in ("", "0")
    logger.setLevel(logging.WARNING if quiet else logging.INFO)
    if not logger.handlers:
        handler = _StderrHandler()
        handler.setFormatter(logging.Formatter("%(levelname)s %(message)s"))
        logger.addHandler(handler)


def _print_config(command: str, resolved: dict) -> None:
    line = dict(resolved)
    line["command"] = command
    print("config:", json.dumps(line, sort_keys=True, default=str), flush=True)


def _parse_range(text: str, flag: str) -> tuple[float, float]:
    try:
        lo, hi = (float(part) for part in text.split(","))
    except ValueError as exc:
        raise UsageError(f"{flag} expects 'low,high', got {text!r}") from exc
    if lo > hi:
        raise UsageError(f"{flag} is inverted: {lo} > {hi}")
    return lo, hi


def _read_config_file(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise UsageError(f"config file {path} must hold a flat JSON object")
    unknown = sorted(set(data) - set(_ALL_KEYS))
    if unknown:
        raise UsageError(
            f"unknown config key(s) {unknown}; known keys: {sorted(_ALL_KEYS)}"
        )
    return data


def _resolve_train_configs(args):
    """Preset defaults, then config file entries, then explicit flags."""
    flat: dict = {}
    if args.preset == "desk":
        flat.update(epochs=60, crop=64)
    if args.config:
        flat.update(_read_config_file(args.config))
    for key in (
        "scales",
        "trunk_rdbs",
        "base_channels",
        "stages",
        "batch_size",
        "epochs",
        "crop",
        "seed",
        "extractor",
    ):
        value = getattr(args, key)
        if value is not None:
            flat[key] = value
    if args.lambda_weight is not None:
        flat["lambda"] = args.lambda_weight

    tnet = TNetConfig(**{k: flat[k] for k in _TNET_KEYS if k in flat})
    stack = StackConfig(**{k: flat[k] for k in _STACK_KEYS if k in flat})
    extractor = FeatureExtractorSpec(
        kind=flat.get("extractor", "fixed-random-pyramid"),
        seed=flat.get("extractor_seed", 0),
    )
    loss = LossConfig(
        stages=stack.stages,
        lambda_weight=flat.get("lambda", 0.04),
        extractor=extractor,
    )
    train_cfg = TrainConfig(**{k: flat[k] for k in _TRAIN_KEYS if k in flat})

    resolved = {}
    resolved.update(asdict(tnet))
    resolved.update(asdict(stack))
    train_dict = asdict(train_cfg)
    train_dict.pop("stages")
    resolved.update(train_dict)
    resolved["lambda"] = loss.lambda_weight
    resolved["extractor"] = loss.extractor.kind
    resolved["extractor_seed"] = loss.extractor.seed
    return train_cfg, tnet, stack, loss, resolved


def _list_images(path: Path) -> list[Path]:
    if path.is_file():
        return [path]
    if path.is_dir():
        return sorted(p for p in path.iterdir() if p.suffix.lower() in _IMAGE_SUFFIXES)
    raise UsageError(f"{path} is neither an image file nor a directory")


def cmd_synthesize(args) -> int:
    resolved = {
        "clean": args.clean,
        "out": args.out,
        "count": args.count,
        "beta_range": args.beta_range,
        "airlight_range": args.airlight_range,
        "depth_kinds": args.depth_kinds,
        "crop": args.crop,
        "seed": args.seed,
    }
    _print_config("synthesize", resolved)
    if not Path(args.clean).is_dir():
        raise UsageError(f"--clean {args.clean} is not a directory")
    manifest = build_dataset(
        args.clean,
        args.out,
        count=args.count,
        beta_range=_parse_range(args.beta_range, "--beta-range"),
        airlight_range=_parse_range(args.airlight_range, "--airlight-range"),
        depth_kinds=tuple(args.depth_kinds.split(",")),
        seed=args.seed,
        crop=args.crop,
    )
    count = len(read_manifest(manifest))
    print(f"wrote {count} pair(s) to {args.out} (manifest: {manifest})")
    return 0


def cmd_train(args) -> int:
    if args.resume:
        ck = load_checkpoint(args.resume)
        train_dict = dict(ck.config["train"])
        if args.epochs is not None:
            train_dict["epochs"] = args.epochs
        train_cfg = TrainConfig(**train_dict)
        resolved = dict(ck.config["tnet"])
        resolved.update(ck.config["stack"])
        shown = dict(train_dict)
        shown.pop("stages", None)
        resolved.update(shown)
        resolved["resume"] = str(args.resume)
        _print_config("train", resolved)
        result = train(args.data, args.out, train_cfg=train_cfg, resume=args.resume)
    else:
        train_cfg, tnet, stack, loss, resolved = _resolve_train_configs(args)
        _print_config("train", resolved)
        if not Path(args.data).is_file():
            raise UsageError(f"--data {args.data} is not a manifest file")
        result = train(
            args.data,
            args.out,
            train_cfg=train_cfg,
            tnet_cfg=tnet,
            stack_cfg=stack,
            loss_cfg=loss,
        )
    curves = render_training_curves(
        result.records, Path(args.out) / "training_curves.png"
    )
    print(
        f"trained {result.epochs_run} epoch(s): eval PSNR {result.final_psnr:.3f} dB "
        f"(hazy baseline {result.baseline_psnr:.3f} dB, best {result.best_psnr:.3f} dB)"
    )
    print(f"checkpoints: {result.best_path}, {result.last_path}; curves: {curves}")
    return 0


def cmd_dehaze(args) -> int:
    resolved = {
        "checkpoint": args.checkpoint,
        "input": args.input,
        "out": args.out,
        "stages": args.stages,
        "save_stages": args.save_stages,
        "seed": None,
    }
    _print_config("dehaze", resolved)
    ck = load_checkpoint(args.checkpoint)
    model = ck.build_model()
    model.eval()
    stages = ck.stack_config().stages
    if args.stages is not None and args.stages != stages:
        logger.warning(
            "running %d stage(s) while the checkpoint was trained with %d; "
            "this is an experiment, not a trained operating point",
            args.stages,
            stages,
        )
        stages = args.stages
    multiple = 2 ** ck.tnet_config().scales

    inputs = _list_images(Path(args.input))
    if not inputs:
        raise UsageError(f"no images found under {args.input}")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    torch.set_num_threads(1)
    for src in inputs:
        image = load_image(src)
        h, w = image.height, image.width
        x0 = to_network_tensor(image)
        pad_h = (-h) % multiple
        pad_w = (-w) % multiple
        if pad_h or pad_w:
            x0 = F.pad(x0, (0, pad_w, 0, pad_h), mode="reflect")
        with torch.no_grad():
            output = model(x0, stages)
        name = src.stem
        if args.save_stages:
            for k, stage_out in enumerate(output.per_stage, start=1):
                buf = from_network_tensor(stage_out[:, :, :h, :w])
                save_image(buf, out_dir / f"{name}_stage{k}.png")
        final = from_network_tensor(output.final[:, :, :h, :w])
        save_image(final, out_dir / f"{name}.png")
        logger.info("dehazed %s (%dx%d, %d stage(s))", src.name, w, h, stages)
    print(f"dehazed {len(inputs)} image(s) into {out_dir}")
    return 0


def cmd_eval(args) -> int:
    resolved = {
        "pred": args.pred,
        "gt": args.gt,
        "out": args.out,
        "allow_partial": args.allow_partial,
        "seed": None,
    }
    _print_config("eval", resolved)
    pred_dir, gt_dir = Path(args.pred), Path(args.gt)
    for flag, path in (("--pred", pred_dir), ("--gt", gt_dir)):
        if not path.is_dir():
            raise UsageError(f"{flag} {path} is not a directory")
    pred_names = {p.name for p in pred_dir.iterdir() if p.suffix.lower() in _IMAGE_SUFFIXES}
    gt_names = {p.name for p in gt_dir.iterdir() if p.suffix.lower() in _IMAGE_SUFFIXES}
    only_pred = sorted(pred_names - gt_names)
    only_gt = sorted(gt_names - pred_names)
    if (only_pred or only_gt) and not args.allow_partial:
        raise UsageError(
            "prediction and ground-truth files do not pair up "
            f"(only in --pred: {only_pred}; only in --gt: {only_gt}); "
            "pass --allow-partial to evaluate the intersection"
        )
    common = sorted(pred_names & gt_names)
    if not common:
        raise UsageError("no filenames in common between --pred and --gt")

    report = evaluate_pairs(
        (name, load_image(pred_dir / name), load_image(gt_dir / name))
        for name in common
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = report.to_csv(out_dir / "metrics.csv")
    (out_dir / "metrics.txt").write_text(report.table() + "\n", encoding="utf-8")
    figures = render_metric_figures(report, out_dir)
    logger.info("wrote %s and %s", csv_path, ", ".join(str(f) for f in figures))
    print(report.table())
    print(
        f"mean PSNR {report.mean_psnr:.3f} dB, mean SSIM {report.mean_ssim:.4f} "
        f"over {report.count} pair(s)"
    )
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="tnet-dehaze", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_syn = sub.add_parser("synthesize", help="generate paired hazy/clean data")
    p_syn.add_argument("--clean", required=True, help="directory of clean images")
    p_syn.add_argument("--out", required=True, help="output dataset directory")
    p_syn.add_argument("--count", type=int, required=True, help="number of pairs")
    p_syn.add_argument("--seed", type=int, default=0)
    p_syn.add_argument(
        "--beta-range",
        default=f"{DEFAULT_BETA_RANGE[0]},{DEFAULT_BETA_RANGE[1]}",
        help="scattering coefficient range 'low,high'",
    )
    p_syn.add_argument(
        "--airlight-range",
        default=f"{DEFAULT_AIRLIGHT_RANGE[0]},{DEFAULT_AIRLIGHT_RANGE[1]}",
        help="airlight range 'low,high' within (0, 1]",
    )
    p_syn.add_argument(
        "--depth-kinds",
        default=",".join(DEPTH_KINDS),
        help=f"comma-separated subset of {DEPTH_KINDS}",
    )
    p_syn.add_argument("--crop", type=int, default=None, help="square crop size")
    p_syn.set_defaults(func=cmd_synthesize)

    p_train = sub.add_parser("train", help="train on a synthesized dataset")
    p_train.add_argument("--data", required=True, help="dataset manifest (JSONL)")
    p_train.add_argument("--out", required=True, help="run directory")
    p_train.add_argument(
        "--preset", choices=("desk", "full"), default="desk",
        help="desk: scaled-down test settings; full: full-scale defaults",
    )
    p_train.add_argument("--config", default=None, help="flat JSON config file")
    p_train.add_argument("--resume", default=None, help="checkpoint to continue from")
    p_train.add_argument("--seed", type=int, default=None)
    p_train.add_argument("--epochs", type=int, default=None)
    p_train.add_argument("--batch-size", type=int, default=None, dest="batch_size")
    p_train.add_argument("--crop", type=int, default=None)
    p_train.add_argument("--stages", type=int, default=None, help="recursion stages K")
    p_train.add_argument("--scales", type=int, default=None, help="down/up pairs")
    p_train.add_argument(
        "--trunk-rdbs", type=int, default=None, dest="trunk_rdbs",
        help="trunk RDB pairs",
    )
    p_train.add_argument(
        "--base-channels", type=int, default=None, dest="base_channels"
    )
    p_train.add_argument(
        "--lambda", type=float, default=None, dest="lambda_weight",
        help="perceptual loss weight",
    )
    p_train.add_argument("--extractor", choices=EXTRACTOR_KINDS, default=None)
    p_train.set_defaults(func=cmd_train)

    p_dh = sub.add_parser("dehaze", help="run a checkpoint on images")
    p_dh.add_argument("--checkpoint", required=True)
    p_dh.add_argument("--input", required=True, help="image file or directory")
    p_dh.add_argument("--out", required=True, help="output directory")
    p_dh.add_argument(
        "--stages", type=int, default=None,
        help="override the trained stage count (experimental)",
    )
    p_dh.add_argument("--save-stages", action="store_true", dest="save_stages")
    p_dh.set_defaults(func=cmd_dehaze)

    p_ev = sub.add_parser("eval", help="PSNR/SSIM of paired directories")
    p_ev.add_argument("--pred", required=True)
    p_ev.add_argument("--gt", required=True)
    p_ev.add_argument("--out", required=True, help="report directory")
    p_ev.add_argument("--allow-partial", action="store_true", dest="allow_partial")
    p_ev.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _configure_logging()
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ConfigError, DomainError, ShapeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (TnetDehazeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entrypoint() -> None:
    sys.exit(main(sys.argv[1:]))
