"""Checkpoint directory format.

A checkpoint is a directory holding ``manifest.json`` (format version, phase
tag, best epoch, config echo, and a tensor index of {name, shape, dtype,
offset, length}) plus ``tensors.bin`` (the named tensors' float32 payloads,
little-endian, row-major, concatenated in manifest order). Offsets and lengths
are in bytes. Round-tripping reproduces every tensor bit-exactly.
"""

from __future__ import annotations

import json
import os
import sys
from array import array
from dataclasses import dataclass

from .compute.tensor import Tensor

CHECKPOINT_FORMAT_VERSION = 1

PHASES = ("pretrained", "finetuned")


@dataclass
class Checkpoint:
    phase: str
    epoch: int
    config: dict
    tensors: dict  # name -> Tensor (float32)

    def require(self, name: str) -> Tensor:
        if name not in self.tensors:
            raise ValueError(f"missing tensor {name!r} in checkpoint")
        return self.tensors[name]


def _to_f32(t: Tensor) -> array:
    if t.dtype == "f":
        return t.data
    return array("f", [float(v) for v in t.data])


def save_checkpoint(named_tensors: dict, config: dict, phase: str, epoch: int,
                    path) -> None:
    if phase not in PHASES:
        raise ValueError(f"phase must be one of {PHASES}, got {phase!r}")
    os.makedirs(path, exist_ok=True)
    index = []
    payloads = []
    offset = 0
    for name in sorted(named_tensors):
        t = named_tensors[name]
        buf = _to_f32(t)
        if sys.byteorder == "big":
            buf = array("f", buf)
            buf.byteswap()
        raw = buf.tobytes()
        index.append({"name": name, "shape": list(t.shape), "dtype": "f32",
                      "offset": offset, "length": len(raw)})
        payloads.append(raw)
        offset += len(raw)
    manifest = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "phase": phase,
        "epoch": epoch,
        "config": config,
        "tensors": index,
    }
    with open(os.path.join(path, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, separators=(",", ":"))
    with open(os.path.join(path, "tensors.bin"), "wb") as fh:
        fh.write(b"".join(payloads))


def load_checkpoint(path) -> Checkpoint:
    manifest_path = os.path.join(path, "manifest.json")
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    version = manifest.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format_version {version!r}")
    phase = manifest.get("phase")
    if phase not in PHASES:
        raise ValueError(f"unknown checkpoint phase {phase!r}")

    with open(os.path.join(path, "tensors.bin"), "rb") as fh:
        blob = fh.read()
    expected = sum(entry["length"] for entry in manifest["tensors"])
    if len(blob) < expected:
        raise ValueError(f"truncated payload: {len(blob)} bytes, manifest "
                         f"expects {expected}")
    if len(blob) > expected:
        raise ValueError("missing tensor: payload larger than manifest index")

    tensors = {}
    for entry in manifest["tensors"]:
        name = entry["name"]
        shape = tuple(entry["shape"])
        n = 1
        for s in shape:
            n *= s
        if entry["length"] != 4 * n:
            raise ValueError(f"missing tensor data for {name!r}")
        buf = array("f")
        buf.frombytes(blob[entry["offset"]:entry["offset"] + entry["length"]])
        if sys.byteorder == "big":
            buf.byteswap()
        tensors[name] = Tensor(shape, buf)
    return Checkpoint(phase=phase, epoch=manifest.get("epoch", 0),
                      config=manifest.get("config", {}), tensors=tensors)
