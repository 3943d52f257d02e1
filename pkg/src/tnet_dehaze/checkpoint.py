"""Single-file checkpoint archive.

Layout: 8-byte magic, u32 format version, u64 header length, a UTF-8 JSON
header, then raw little-endian float32 tensor bytes back to back. The
header echoes every config, the seed, the epoch counter, the best-metric
record, and a tensor manifest (name, shape, offset, byte count) covering
model parameters and, when present, Adam moment tensors. Loading and
re-saving reproduces parameters bit for bit.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch

from .backbone import TNetConfig
from .errors import ConfigError
from .losses import FeatureExtractorSpec, LossConfig
from .stack import StackConfig, StackTNet

MAGIC = b"TNDZCKPT"
FORMAT_VERSION = 1


def _tensor_bytes(t: torch.Tensor) -> bytes:
    t = t.detach().cpu().contiguous()
    if t.dtype != torch.float32:
        raise ConfigError(f"checkpoint format stores float32 tensors, got {t.dtype}")
    arr = t.numpy()
    if arr.dtype.byteorder not in ("<", "=", "|"):
        arr = arr.astype("<f4")
    return arr.tobytes()


def _adam_steps(optimizer, names_by_param) -> tuple[dict, list]:
    """Step counter per parameter name plus (name, tensor) moment pairs."""
    steps: dict[str, int] = {}
    moments: list[tuple[str, torch.Tensor]] = []
    for param, state in optimizer.state.items():
        name = names_by_param.get(id(param))
        if name is None or not state:
            continue
        step = state["step"]
        steps[name] = int(step.item() if torch.is_tensor(step) else step)
        moments.append((f"adam.exp_avg.{name}", state["exp_avg"]))
        moments.append((f"adam.exp_avg_sq.{name}", state["exp_avg_sq"]))
    return steps, moments


def save_checkpoint(
    path,
    model: torch.nn.Module,
    *,
    config: dict,
    seed: int,
    epoch: int,
    best: dict | None = None,
    optimizer=None,
) -> Path:
    """Write ``model`` (and optionally Adam state) to ``path``.

    ``config`` is the nested config echo, e.g. the output of
    ``configs_to_dict``; ``epoch`` counts completed epochs; ``best`` is a
    free-form record such as {"psnr": ..., "epoch": ...}.
    """
    path = Path(path)
    entries: list[tuple[str, torch.Tensor]] = list(model.named_parameters())
    optimizer_header = None
    if optimizer is not None:
        names_by_param = {id(p): n for n, p in model.named_parameters()}
        steps, moments = _adam_steps(optimizer, names_by_param)
        entries.extend(moments)
        group = optimizer.param_groups[0]
        optimizer_header = {
            "type": "adam",
            "betas": list(group["betas"]),
            "eps": group["eps"],
            "steps": steps,
        }

    manifest = []
    blobs = []
    offset = 0
    for name, tensor in entries:
        blob = _tensor_bytes(tensor)
        manifest.append(
            {
                "name": name,
                "shape": list(tensor.shape),
                "dtype": "float32",
                "offset": offset,
                "nbytes": len(blob),
            }
        )
        blobs.append(blob)
        offset += len(blob)

    header = {
        "format_version": FORMAT_VERSION,
        "config": config,
        "seed": seed,
        "epoch": epoch,
        "best": best,
        "rng": {"master_seed": seed, "next_epoch": epoch},
        "optimizer": optimizer_header,
        "tensors": manifest,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for blob in blobs:
            fh.write(blob)
    return path


@dataclass
class Checkpoint:
    path: Path
    header: dict
    tensors: dict

    @property
    def config(self) -> dict:
        return self.header["config"]

    @property
    def seed(self) -> int:
        return self.header["seed"]

    @property
    def epoch(self) -> int:
        return self.header["epoch"]

    @property
    def best(self) -> dict | None:
        return self.header["best"]

    def tnet_config(self) -> TNetConfig:
        return TNetConfig(**self.config["tnet"])

    def stack_config(self) -> StackConfig:
        return StackConfig(**self.config["stack"])

    def loss_config(self) -> LossConfig:
        raw = dict(self.config["loss"])
        ex = raw["extractor"]
        spec = FeatureExtractorSpec(
            kind=ex["kind"],
            levels=tuple(tuple(level) for level in ex["levels"]),
            seed=ex["seed"],
        )
        return LossConfig(
            stages=raw["stages"], lambda_weight=raw["lambda_weight"], extractor=spec
        )

    def parameter_names(self) -> list[str]:
        return [n for n in self.tensors if not n.startswith("adam.")]

    def load_into(self, model: torch.nn.Module) -> None:
        """Copy stored parameters into ``model``, bit for bit."""
        named = dict(model.named_parameters())
        stored = set(self.parameter_names())
        if stored != set(named):
            missing = sorted(set(named) - stored)
            extra = sorted(stored - set(named))
            raise ConfigError(
                f"checkpoint does not match the model: missing {missing[:5]}, "
                f"unexpected {extra[:5]}"
            )
        with torch.no_grad():
            for name, param in named.items():
                arr = self.tensors[name]
                if tuple(arr.shape) != tuple(param.shape):
                    raise ConfigError(
                        f"parameter {name}: checkpoint shape {arr.shape} vs "
                        f"model shape {tuple(param.shape)}"
                    )
                param.copy_(torch.from_numpy(arr.copy()))

    def build_model(self) -> StackTNet:
        model = StackTNet(self.tnet_config(), self.stack_config(), seed=self.seed)
        self.load_into(model)
        return model

    def restore_optimizer(self, optimizer, model: torch.nn.Module) -> None:
        """Rebuild Adam moment/step state for ``optimizer`` over ``model``."""
        info = self.header.get("optimizer")
        if info is None:
            return
        skeleton = optimizer.state_dict()
        state = {}
        for idx, (name, param) in enumerate(model.named_parameters()):
            step = info["steps"].get(name, 0)
            if step <= 0:
                continue
            avg = self.tensors[f"adam.exp_avg.{name}"]
            sq = self.tensors[f"adam.exp_avg_sq.{name}"]
            state[idx] = {
                "step": torch.tensor(float(step)),
                "exp_avg": torch.from_numpy(avg.copy()).reshape(param.shape),
                "exp_avg_sq": torch.from_numpy(sq.copy()).reshape(param.shape),
            }
        skeleton["state"] = state
        optimizer.load_state_dict(skeleton)


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise ConfigError(f"{path} is not a checkpoint (bad magic)")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != FORMAT_VERSION:
            raise ConfigError(f"unsupported checkpoint version {version}")
        (header_len,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(header_len).decode())
        payload = fh.read()
    tensors = {}
    for entry in header["tensors"]:
        start, nbytes = entry["offset"], entry["nbytes"]
        arr = np.frombuffer(payload[start : start + nbytes], dtype="<f4")
        tensors[entry["name"]] = arr.reshape(entry["shape"])
    return Checkpoint(path=path, header=header, tensors=tensors)


def configs_to_dict(tnet, stack, train, loss) -> dict:
    """Serialize the four config dataclasses into one JSON-safe dict."""
    out = {
        "tnet": asdict(tnet),
        "stack": asdict(stack),
        "loss": asdict(loss),
        "train": asdict(train) if not isinstance(train, dict) else dict(train),
    }
    out["loss"]["extractor"]["levels"] = [
        list(level) for level in out["loss"]["extractor"]["levels"]
    ]
    return out
