"""
Versioned binary checkpoint container.

Layout (all integers little-endian):
    magic            8 bytes  b"LSTNMTCK"
    format version   uint32
    header length    uint32, followed by a UTF-8 JSON header
                     {"config": {...}, "metadata": {...}}
    tensor count     uint32
    per tensor       uint16 name length, UTF-8 name, uint8 ndim,
                     ndim x uint64 dims, float64 '<f8' data in row-major order
"""

import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from errors import CheckpointError

MAGIC = b"LSTNMTCK"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    config: dict
    tensors: dict
    metadata: dict = field(default_factory=dict)


def save_checkpoint(path, config, tensors, metadata=None):
    """Write a checkpoint atomically (temporary file, then rename)"""
    header = json.dumps({"config": config, "metadata": metadata or {}}, sort_keys=True).encode("utf-8")
    tmp_path = f"{path}.tmp"
    with open(tmp_path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", FORMAT_VERSION, len(header)))
        f.write(header)
        f.write(struct.pack("<I", len(tensors)))
        for name, array in tensors.items():
            array = np.ascontiguousarray(array, dtype="<f8")
            encoded = name.encode("utf-8")
            f.write(struct.pack("<H", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<B", array.ndim))
            f.write(struct.pack(f"<{array.ndim}Q", *array.shape))
            f.write(array.tobytes(order="C"))
    os.replace(tmp_path, path)


def _read_exact(f, size, path):
    data = f.read(size)
    if len(data) != size:
        raise CheckpointError(f"{path}: truncated checkpoint")
    return data


def load_checkpoint(path):
    try:
        f = open(path, "rb")
    except FileNotFoundError as e:
        raise CheckpointError(f"checkpoint not found: {path}") from e
    with f:
        if _read_exact(f, len(MAGIC), path) != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
        version, header_len = struct.unpack("<II", _read_exact(f, 8, path))
        if version != FORMAT_VERSION:
            raise CheckpointError(f"{path}: unsupported format version {version}")
        header = json.loads(_read_exact(f, header_len, path).decode("utf-8"))
        (count,) = struct.unpack("<I", _read_exact(f, 4, path))
        tensors = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", _read_exact(f, 2, path))
            name = _read_exact(f, name_len, path).decode("utf-8")
            (ndim,) = struct.unpack("<B", _read_exact(f, 1, path))
            shape = struct.unpack(f"<{ndim}Q", _read_exact(f, 8 * ndim, path))
            size = int(np.prod(shape, dtype=np.int64))
            raw = _read_exact(f, 8 * size, path)
            tensors[name] = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)
        if f.read(1):
            raise CheckpointError(f"{path}: trailing bytes after tensor table")
    return Checkpoint(config=header["config"], tensors=tensors, metadata=header.get("metadata", {}))
