"""Binary checkpoint container: JSON header + raw little-endian tensor blobs.

Layout: 4-byte magic, 8-byte little-endian header length, UTF-8 JSON
header, then the tensor blobs in header order.  The header records the
format version, step counter, config snapshot, optimizer param groups and
every tensor's name/shape/dtype, making the file self-describing and the
save->load->save round trip byte-identical.
"""

from __future__ import annotations

import json
import struct

import numpy as np
import torch

from .errors import CheckpointIntegrityError, CheckpointVersionError

MAGIC = b"MLCK"
FORMAT_VERSION = 1

_DTYPES = {
    "float32": (torch.float32, np.float32),
    "float64": (torch.float64, np.float64),
    "int64": (torch.int64, np.int64),
    "int32": (torch.int32, np.int32),
    "uint8": (torch.uint8, np.uint8),
    "bool": (torch.bool, np.bool_),
}


def _dtype_name(t: torch.Tensor) -> str:
    name = str(t.dtype).replace("torch.", "")
    if name not in _DTYPES:
        raise ValueError(f"unsupported tensor dtype {name}")
    return name


def save(path: str, tensors: dict[str, torch.Tensor], meta: dict) -> None:
    """Write named tensors plus a JSON-serializable metadata dict."""
    entries = []
    blobs = []
    for name, tensor in tensors.items():
        arr = tensor.detach().cpu().contiguous().numpy()
        blob = arr.tobytes()
        entries.append({
            "name": name,
            "shape": list(tensor.shape),
            "dtype": _dtype_name(tensor),
            "nbytes": len(blob),
        })
        blobs.append(blob)
    header = {
        "version": FORMAT_VERSION,
        "meta": meta,
        "tensors": entries,
        "total_bytes": sum(len(b) for b in blobs),
    }
    header_bytes = json.dumps(header, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for blob in blobs:
            fh.write(blob)


def load(path: str) -> tuple[dict[str, torch.Tensor], dict]:
    """Read a checkpoint; returns (tensors, meta). Rejects truncation and
    unknown format versions."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 12 or data[:4] != MAGIC:
        raise CheckpointIntegrityError("not a checkpoint file (bad magic)")
    (header_len,) = struct.unpack("<Q", data[4:12])
    if len(data) < 12 + header_len:
        raise CheckpointIntegrityError("truncated checkpoint header")
    try:
        header = json.loads(data[12:12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointIntegrityError(f"corrupt checkpoint header: {exc}") from exc
    version = header.get("version")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"checkpoint format version {version!r} not supported (expected {FORMAT_VERSION})")
    body = data[12 + header_len:]
    if len(body) != header["total_bytes"]:
        raise CheckpointIntegrityError(
            f"checkpoint body is {len(body)} bytes, header declares {header['total_bytes']}")
    tensors: dict[str, torch.Tensor] = {}
    offset = 0
    for entry in header["tensors"]:
        nbytes = entry["nbytes"]
        blob = body[offset:offset + nbytes]
        offset += nbytes
        torch_dtype, np_dtype = _DTYPES[entry["dtype"]]
        arr = np.frombuffer(blob, dtype=np_dtype).reshape(entry["shape"]).copy()
        tensors[entry["name"]] = torch.from_numpy(arr).to(torch_dtype)
    return tensors, header["meta"]
