"""Binary checkpoint container.

Layout::

    b"CREAGENCKPT\\0"             12-byte magic
    uint32 little-endian         format version
    uint32 little-endian         header length H
    H bytes                      UTF-8 JSON header (sorted keys)
    payload                      concatenated little-endian float32 arrays

The header holds the network specs, free-form metadata and a tensor table
``[{"name", "shape", "offset"}]`` in byte offsets from the payload start.
Serialization is deterministic, so the same state always yields the same bytes.
"""

from __future__ import annotations

import json
import os
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ValidationError

MAGIC = b"CREAGENCKPT\0"
VERSION = 1
_LE_F32 = np.dtype("<f4")
_LE_F64 = np.dtype("<f8")


class CheckpointError(ValidationError):
    pass


@dataclass
class Checkpoint:
    specs: dict
    tensors: "OrderedDict[str, np.ndarray]"
    meta: dict = field(default_factory=dict)
    precision: str = "float32"

    def group(self, prefix: str) -> "OrderedDict[str, np.ndarray]":
        """Tensors under ``prefix.`` with the prefix stripped."""
        cut = len(prefix) + 1
        return OrderedDict((k[cut:], v) for k, v in self.tensors.items() if k.startswith(prefix + "."))


def to_bytes(ckpt: Checkpoint) -> bytes:
    dt = _LE_F32 if ckpt.precision == "float32" else _LE_F64
    if ckpt.precision not in ("float32", "float64"):
        raise CheckpointError(f"unknown checkpoint precision {ckpt.precision!r}")
    table, chunks, offset = [], [], 0
    for name, arr in ckpt.tensors.items():
        data = np.ascontiguousarray(np.asarray(arr), dtype=dt).tobytes()
        table.append({"name": name, "offset": offset, "shape": list(np.shape(arr))})
        chunks.append(data)
        offset += len(data)
    header = {"meta": ckpt.meta, "precision": ckpt.precision, "specs": ckpt.specs, "tensors": table}
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<II", VERSION, len(head)) + head + b"".join(chunks)


def from_bytes(blob: bytes, source: str = "<bytes>") -> Checkpoint:
    if not blob.startswith(MAGIC):
        raise CheckpointError(f"{source}: not a checkpoint file (bad magic)")
    pos = len(MAGIC)
    if len(blob) < pos + 8:
        raise CheckpointError(f"{source}: truncated header")
    version, hlen = struct.unpack_from("<II", blob, pos)
    if version != VERSION:
        raise CheckpointError(f"{source}: unsupported checkpoint version {version}")
    pos += 8
    try:
        header = json.loads(blob[pos : pos + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise CheckpointError(f"{source}: corrupt header ({err})") from None
    payload = memoryview(blob)[pos + hlen :]
    dt = _LE_F32 if header.get("precision", "float32") == "float32" else _LE_F64
    tensors = OrderedDict()
    for entry in header["tensors"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        end = entry["offset"] + count * dt.itemsize
        if end > len(payload):
            raise CheckpointError(f"{source}: tensor {entry['name']!r} runs past end of file")
        arr = np.frombuffer(payload[entry["offset"] : end], dtype=dt).reshape(entry["shape"])
        tensors[entry["name"]] = arr.astype(dt.newbyteorder("="))
    return Checkpoint(header["specs"], tensors, header.get("meta", {}), header.get("precision", "float32"))


def save(path, ckpt: Checkpoint) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(to_bytes(ckpt))
    os.replace(tmp, path)
    return path


def load(path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    return from_bytes(path.read_bytes(), str(path))


def pack_modules(modules: dict) -> "OrderedDict[str, np.ndarray]":
    """Flatten ``{"G": module, "D": module}`` into ``{"G.layer.weight": array}``."""
    out = OrderedDict()
    for key, module in modules.items():
        for name, arr in module.state_dict().items():
            out[f"{key}.{name}"] = arr
    return out
