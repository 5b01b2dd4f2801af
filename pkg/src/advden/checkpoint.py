"""Versioned binary checkpoint for model parameters and optimizer state.

Layout::

    advden-checkpoint <version> <config json>\\n
    block <name> <d0,d1,...>\\n <float32 little-endian payload>
    ...
    end\\n
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .errors import CheckpointError
from .model import ModelConfig, ModelParams, build_model
from .optim import AdaDeltaState

FORMAT = "advden-checkpoint"
VERSION = 1
_DTYPE = np.dtype("<f4")


def _block(fh, name: str, arr: np.ndarray) -> None:
    dims = ",".join(str(n) for n in arr.shape)
    fh.write(f"block {name} {dims}\n".encode())
    fh.write(np.ascontiguousarray(arr, dtype=_DTYPE).tobytes())


def save_checkpoint(path, params: ModelParams, opt_states: dict | None = None, extra: dict | None = None) -> Path:
    """Write parameters (and optionally AdaDelta states) atomically."""
    path = Path(path)
    header = {"model": params.config.to_dict(), "extra": extra or {}}
    if opt_states:
        first = next(iter(opt_states.values()))
        header["optimizer"] = {"rho": first.rho, "eps": first.eps, "weight_decay": first.weight_decay}
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(f"{FORMAT} {VERSION} {json.dumps(header, sort_keys=True)}\n".encode())
            for name, v in params.tensors().items():
                _block(fh, name, v.values)
            for name, st in (opt_states or {}).items():
                _block(fh, f"opt.{name}.acc_grad_sq", st.acc_grad_sq)
                _block(fh, f"opt.{name}.acc_update_sq", st.acc_update_sq)
            fh.write(b"end\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _readline(fh, path) -> str:
    line = fh.readline()
    if not line.endswith(b"\n"):
        raise CheckpointError(f"{path}: truncated checkpoint")
    try:
        return line[:-1].decode()
    except UnicodeDecodeError:
        raise CheckpointError(f"{path}: corrupt block header") from None


def read_checkpoint(path):
    """Return ``(header dict, {block name: float32 array})``."""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"{path}: no such checkpoint")
    with open(path, "rb") as fh:
        first = _readline(fh, path)
        parts = first.split(" ", 2)
        if len(parts) != 3 or parts[0] != FORMAT:
            raise CheckpointError(f"{path}: not an {FORMAT} file")
        if parts[1] != str(VERSION):
            raise CheckpointError(f"{path}: unsupported checkpoint version {parts[1]} (expected {VERSION})")
        try:
            header = json.loads(parts[2])
        except json.JSONDecodeError as exc:
            raise CheckpointError(f"{path}: bad header: {exc}") from None
        blocks = {}
        while True:
            line = _readline(fh, path)
            if line == "end":
                break
            fields = line.split(" ")
            if len(fields) != 3 or fields[0] != "block":
                raise CheckpointError(f"{path}: malformed block header {line!r}")
            shape = tuple(int(n) for n in fields[2].split(",")) if fields[2] else ()
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(count * _DTYPE.itemsize)
            if len(raw) != count * _DTYPE.itemsize:
                raise CheckpointError(f"{path}: block {fields[1]} is truncated")
            blocks[fields[1]] = np.frombuffer(raw, dtype=_DTYPE).reshape(shape).copy()
    return header, blocks


def load_checkpoint(path, dtype=np.float64):
    """Rebuild ``(ModelParams, optimizer states)`` from a checkpoint file."""
    header, blocks = read_checkpoint(path)
    try:
        config = ModelConfig.from_dict(header["model"]).validate()
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: invalid model config: {exc}") from None
    params = build_model(config, 0, dtype=dtype)
    for name, var in params.tensors().items():
        if name not in blocks:
            raise CheckpointError(f"{path}: missing parameter block {name}")
        if blocks[name].shape != var.shape:
            raise CheckpointError(f"{path}: block {name} has shape {blocks[name].shape}, "
                                  f"config expects {var.shape}")
        var.values[...] = blocks[name]
    states = {}
    opt = header.get("optimizer")
    if opt:
        for name, var in params.tensors().items():
            g, u = blocks.get(f"opt.{name}.acc_grad_sq"), blocks.get(f"opt.{name}.acc_update_sq")
            if g is not None and u is not None:
                states[name] = AdaDeltaState(g.astype(dtype), u.astype(dtype), opt["rho"], opt["eps"],
                                             opt["weight_decay"])
    return params, states
