"""Versioned weight archives: named parameter groups stored as float32 plus JSON metadata.

An archive is a ``.npz`` file.  Each array key is ``"<group>/<param name>"``;
the ``__meta__`` entry holds a JSON object with ``format_version``, the group
names, and caller-supplied ``config``, ``seed`` and ``epoch``.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

FORMAT_VERSION = 1
META_KEY = "__meta__"


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, groups: dict, config: dict | None = None, seed: int | None = None,
                    epoch: int | None = None) -> Path:
    """Write ``{group name: module}`` to ``path``; returns the path written."""
    path = Path(path)
    arrays = {}
    for group, module in groups.items():
        if "/" in group:
            raise CheckpointError(f"group name may not contain '/': {group!r}")
        for name, t in module.state_dict().items():
            arrays[f"{group}/{name}"] = t.detach().cpu().numpy().astype(np.float32)
    meta = {"format_version": FORMAT_VERSION, "groups": sorted(groups), "config": config or {},
            "seed": seed, "epoch": epoch}
    arrays[META_KEY] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def read_checkpoint(path):
    """Return ``(meta, {group: {param: array}})``."""
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    with np.load(path) as data:
        if META_KEY not in data:
            raise CheckpointError(f"{path} has no metadata entry")
        meta = json.loads(data[META_KEY].tobytes().decode())
        if meta.get("format_version") != FORMAT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {meta.get('format_version')}")
        groups: dict = {g: {} for g in meta["groups"]}
        for key in data.files:
            if key == META_KEY:
                continue
            group, name = key.split("/", 1)
            groups.setdefault(group, {})[name] = data[key]
    return meta, groups


def load_into(module: torch.nn.Module, params: dict) -> torch.nn.Module:
    """Copy archived arrays into ``module``; keys and shapes must match exactly."""
    own = module.state_dict()
    if set(own) != set(params):
        missing, extra = sorted(set(own) - set(params)), sorted(set(params) - set(own))
        raise CheckpointError(f"parameter mismatch: missing {missing}, unexpected {extra}")
    state = {}
    for name, t in own.items():
        arr = params[name]
        if tuple(arr.shape) != tuple(t.shape):
            raise CheckpointError(f"{name}: archived shape {arr.shape}, module shape {tuple(t.shape)}")
        state[name] = torch.as_tensor(arr, dtype=t.dtype)
    module.load_state_dict(state)
    return module
