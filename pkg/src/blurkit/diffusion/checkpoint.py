"""Single-file checkpoint: magic, JSON header, raw little-endian tensors.

Layout::

    b"BLURKITC" | uint64 header length | header JSON (sorted keys) | tensor bytes

The header lists every tensor's name, dtype, shape and byte offset. Saving
the same state twice yields identical bytes.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np
import torch

from ..errors import CheckpointError
from .model import Denoiser, DenoiserConfig
from .schedule import NoiseSchedule
from .train import ModelState, TrainConfig, make_optimizer

MAGIC = b"BLURKITC"
FORMAT_VERSION = 1
_DTYPES = {torch.float32: "<f4", torch.float64: "<f8", torch.int64: "<i8"}
_TORCH = {v: k for k, v in _DTYPES.items()}


def _tensors(state: ModelState) -> list[tuple[str, torch.Tensor]]:
    out = [(f"model.{k}", v) for k, v in sorted(state.model.state_dict().items())]
    names = {id(p): n for n, p in state.model.named_parameters()}
    for p, st in state.optimizer.state.items():
        for key in sorted(st):
            out.append((f"optim.{names[id(p)]}.{key}", torch.as_tensor(st[key])))
    return sorted(out, key=lambda kv: kv[0])


def save_checkpoint(state: ModelState, path) -> None:
    table, blobs, offset = [], [], 0
    for name, t in _tensors(state):
        t = t.detach().cpu().contiguous()
        if t.dtype not in _DTYPES:
            raise CheckpointError(f"cannot store tensor {name} of dtype {t.dtype}")
        data = t.numpy().astype(_DTYPES[t.dtype], copy=False).tobytes()
        table.append({"name": name, "dtype": _DTYPES[t.dtype], "shape": list(t.shape),
                      "offset": offset, "nbytes": len(data)})
        blobs.append(data)
        offset += len(data)
    header = {
        "format_version": FORMAT_VERSION,
        "denoiser_config": state.config.to_dict(),
        "schedule": state.schedule.to_dict(),
        "train_config": state.train_config.to_dict(),
        "step": state.step,
        "seed": state.seed,
        "tensors": table,
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(hbytes)))
        fh.write(hbytes)
        for b in blobs:
            fh.write(b)
    os.replace(tmp, path)


def read_header(path) -> tuple[dict, bytes]:
    raw = Path(path).read_bytes()
    if raw[: len(MAGIC)] != MAGIC or len(raw) < len(MAGIC) + 8:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (n,) = struct.unpack("<Q", raw[len(MAGIC): len(MAGIC) + 8])
    start = len(MAGIC) + 8
    try:
        header = json.loads(raw[start: start + n])
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise CheckpointError(f"{path}: corrupt header ({e})") from None
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: format version {header.get('format_version')} != supported {FORMAT_VERSION}")
    return header, raw[start + n:]


def load_checkpoint(path) -> ModelState:
    header, body = read_header(path)
    tensors = {}
    for e in header["tensors"]:
        end = e["offset"] + e["nbytes"]
        if end > len(body):
            raise CheckpointError(f"{path}: truncated tensor data for {e['name']}")
        arr = np.frombuffer(body[e["offset"]:end], dtype=e["dtype"]).reshape(e["shape"])
        tensors[e["name"]] = torch.from_numpy(arr.copy()).to(_TORCH[e["dtype"]])
    try:
        config = DenoiserConfig.from_dict(header["denoiser_config"])
        tc = TrainConfig.from_dict(header["train_config"])
        schedule = NoiseSchedule(**header["schedule"])
        model = Denoiser(config)
        model.load_state_dict({k[len("model."):]: v for k, v in tensors.items()
                               if k.startswith("model.")})
    except (KeyError, RuntimeError, TypeError) as e:
        raise CheckpointError(f"{path}: inconsistent checkpoint ({e})") from None
    opt = make_optimizer(model, tc)
    params = dict(model.named_parameters())
    for name, p in params.items():
        prefix = f"optim.{name}."
        st = {k[len(prefix):]: v for k, v in tensors.items() if k.startswith(prefix)}
        if st:
            opt.state[p] = st
    return ModelState(model, opt, schedule, tc, int(header["seed"]), int(header["step"]))
