"""Checkpoint container.

Layout::

    b"NLDFCKPT"                 8-byte magic
    uint64 little-endian        header length H in bytes
    H bytes                     UTF-8 JSON header
    raw arrays                  little-endian, C order, in header order

The header lists every tensor as {"name", "shape", "offset", "nbytes"} with
offsets relative to the first byte after the header, plus "dtype", "seed",
"step" and a free-form "meta" object (model config, fusion shape, ...).
Adam moments are stored as ``<name>#m`` and ``<name>#v`` when requested.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .autodiff import Parameter

MAGIC = b"NLDFCKPT"
FORMAT_VERSION = 1


def save_checkpoint(path, named_params: list[tuple[str, Parameter]], *, seed: int, step: int,
                    meta: dict | None = None, include_adam: bool = True) -> None:
    if not named_params:
        raise ValueError("nothing to save")
    dtype = named_params[0][1].data.dtype
    le = dtype.newbyteorder("<")
    arrays: list[tuple[str, np.ndarray]] = []
    for name, p in named_params:
        arrays.append((name, p.data))
        if include_adam:
            arrays.append((f"{name}#m", p.m))
            arrays.append((f"{name}#v", p.v))
    entries, offset = [], 0
    for name, arr in arrays:
        nbytes = arr.size * le.itemsize
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": nbytes})
        offset += nbytes
    header = {
        "format": FORMAT_VERSION,
        "dtype": dtype.name,
        "seed": int(seed),
        "step": int(step),
        "param_steps": {name: p.step for name, p in named_params},
        "tensors": entries,
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for _, arr in arrays:
            fh.write(np.ascontiguousarray(arr, dtype=le).tobytes())


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    (hlen,) = struct.unpack("<Q", data[8:16])
    header = json.loads(data[16:16 + hlen].decode("utf-8"))
    base = 16 + hlen
    le = np.dtype(header["dtype"]).newbyteorder("<")
    tensors = {}
    for e in header["tensors"]:
        raw = data[base + e["offset"]: base + e["offset"] + e["nbytes"]]
        tensors[e["name"]] = np.frombuffer(raw, dtype=le).reshape(e["shape"]).astype(header["dtype"])
    return header, tensors


def load_into(named_params: list[tuple[str, Parameter]], header: dict, tensors: dict[str, np.ndarray]) -> None:
    """Copy stored values (and Adam state when present) into matching parameters."""
    for name, p in named_params:
        if name not in tensors:
            raise KeyError(f"checkpoint has no tensor {name!r}")
        if tensors[name].shape != p.data.shape:
            raise ValueError(f"{name}: shape {tensors[name].shape} != {p.data.shape}")
        p.data[...] = tensors[name]
        if f"{name}#m" in tensors:
            p.m[...] = tensors[f"{name}#m"]
            p.v[...] = tensors[f"{name}#v"]
        p.step = int(header.get("param_steps", {}).get(name, 0))
