"""Binary checkpoints.

Layout (little endian)::

    b"KMCLRCKP"            8-byte magic
    uint32                  format version
    uint64                  header length n
    n bytes                 UTF-8 JSON header: tensors [{name, shape}], id_maps, meta
    float64 payloads        one per tensor, row-major, in header order
"""
import json
import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError
from .optim import ParameterSet

MAGIC = b"KMCLRCKP"
VERSION = 1


def save_checkpoint(path, params, id_maps=None, meta=None):
    names = list(params)
    header = {
        "tensors": [{"name": n, "shape": list(params[n].shape)} for n in names],
        "id_maps": {k: list(v) for k, v in (id_maps or {}).items()},
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with Path(path).open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(blob)))
        fh.write(blob)
        for n in names:
            fh.write(np.ascontiguousarray(params[n].value, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Return ``(params, id_maps, meta)``."""
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version, n = struct.unpack_from("<IQ", data, 8)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    off = 8 + struct.calcsize("<IQ")
    header = json.loads(data[off:off + n].decode("utf-8"))
    off += n
    params = ParameterSet()
    for spec in header["tensors"]:
        shape = tuple(spec["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = off + 8 * count
        if end > len(data):
            raise CheckpointError(f"{path}: truncated payload for {spec['name']}")
        params.add(spec["name"], np.frombuffer(data[off:end], dtype="<f8").reshape(shape).astype(np.float64))
        off = end
    if off != len(data):
        raise CheckpointError(f"{path}: {len(data) - off} trailing bytes")
    return params, header["id_maps"], header["meta"]
