"""Binary checkpoint container.

Layout: 8-byte magic, uint32 format version, uint64 header length, UTF-8
JSON header, then the concatenated tensor payloads. Tensors are stored as
little-endian float32; loading promotes back to float64 working precision.
Writes go through a temp file and rename so readers never see a torn file.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile

import numpy as np

from .tensor import Tensor

MAGIC = b"SPCHLAB\x00"
VERSION = 1


def save_checkpoint(path, tensors: dict[str, np.ndarray | Tensor], meta: dict) -> None:
    index = {}
    payloads = []
    offset = 0
    for name in sorted(tensors):
        t = tensors[name]
        arr = (t.data if isinstance(t, Tensor) else np.asarray(t)).astype("<f4")
        raw = arr.tobytes()
        index[name] = {"shape": list(arr.shape), "offset": offset, "nbytes": len(raw)}
        payloads.append(raw)
        offset += len(raw)
    header = json.dumps({"version": VERSION, "meta": meta, "tensors": index},
                        sort_keys=True).encode("utf-8")
    path = os.fspath(path)
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path) or ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(MAGIC)
            f.write(struct.pack("<I", VERSION))
            f.write(struct.pack("<Q", len(header)))
            f.write(header)
            for raw in payloads:
                f.write(raw)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as f:
        magic = f.read(len(MAGIC))
        if magic != MAGIC:
            raise ValueError(f"not a checkpoint file: {path}")
        (version,) = struct.unpack("<I", f.read(4))
        if version != VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        (hlen,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(hlen).decode("utf-8"))
        base = f.tell()
        tensors = {}
        for name, entry in header["tensors"].items():
            f.seek(base + entry["offset"])
            raw = f.read(entry["nbytes"])
            arr = np.frombuffer(raw, dtype="<f4").reshape(entry["shape"])
            tensors[name] = arr.astype(np.float64)
    return tensors, header["meta"]
