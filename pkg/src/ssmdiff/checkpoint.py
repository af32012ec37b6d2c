"""Single-file checkpoint container: versioned JSON header + raw named-array payload.

The byte layout is deterministic, so save -> load -> save round-trips are
byte-identical (no timestamps, no compression).
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

MAGIC = b"SSMDCKPT"
VERSION = 1


class CheckpointError(Exception):
    pass


def save_checkpoint(path: str | Path, arrays: dict[str, np.ndarray], meta: dict) -> None:
    """Write named arrays plus a JSON-serializable metadata dict."""
    entries = []
    payload = b""
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        entries.append({"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape),
                        "offset": len(payload), "nbytes": arr.nbytes})
        payload += arr.tobytes()
    header = json.dumps({"version": VERSION, "meta": meta, "arrays": entries},
                        sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        f.write(payload)


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"missing checkpoint: {path}")
    with open(path, "rb") as f:
        if f.read(len(MAGIC)) != MAGIC:
            raise CheckpointError(f"not a checkpoint file: {path}")
        (hlen,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(hlen))
        payload = f.read()
    if header["version"] != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {header['version']}")
    arrays = {}
    for e in header["arrays"]:
        raw = payload[e["offset"]:e["offset"] + e["nbytes"]]
        arrays[e["name"]] = np.frombuffer(raw, dtype=np.dtype(e["dtype"])).reshape(e["shape"]).copy()
    return arrays, header["meta"]


def pack_state(model: torch.nn.Module, optimizer: torch.optim.Optimizer | None,
               generator: torch.Generator, step: int, config: dict) -> tuple[dict, dict]:
    """Flatten model/optimizer/rng state into named arrays + metadata."""
    arrays = {f"model.{k}": v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    meta = {"step": step, "config": config, "param_groups": None}
    if optimizer is not None:
        sd = optimizer.state_dict()
        meta["param_groups"] = sd["param_groups"]
        for idx, state in sd["state"].items():
            for key, val in state.items():
                arrays[f"opt.{idx}.{key}"] = (val.detach().cpu().numpy()
                                              if torch.is_tensor(val)
                                              else np.asarray(val))
    arrays["rng_state"] = generator.get_state().numpy()
    return arrays, meta


def unpack_state(arrays: dict, meta: dict, model: torch.nn.Module,
                 optimizer: torch.optim.Optimizer | None,
                 generator: torch.Generator) -> int:
    """Restore model/optimizer/rng from a loaded checkpoint; returns the step counter."""
    model_sd = {k[len("model."):]: torch.from_numpy(v)
                for k, v in arrays.items() if k.startswith("model.")}
    model.load_state_dict(model_sd)
    if optimizer is not None and meta.get("param_groups") is not None:
        state: dict = {}
        for name, v in arrays.items():
            if not name.startswith("opt."):
                continue
            _, idx, key = name.split(".", 2)
            state.setdefault(int(idx), {})[key] = torch.from_numpy(v)
        optimizer.load_state_dict({"state": state, "param_groups": meta["param_groups"]})
    generator.set_state(torch.from_numpy(arrays["rng_state"]))
    return meta["step"]
