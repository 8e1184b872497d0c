"""File formats: named-tensor files, model checkpoints, and run reports.

Tensor files carry a small text manifest (one line per tensor: name, element
type, shape) followed by the concatenated row-major little-endian payloads.
Checkpoints are versioned binary: magic, version, a hash of the canonical
config JSON, then named float64 tensors. Reports are sorted-key JSON so a
deterministic run writes byte-identical files.
"""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

from .errors import StructuralError

__all__ = [
    "write_tensors",
    "read_tensors",
    "load_frame_embeddings",
    "write_checkpoint",
    "read_checkpoint",
    "config_hash",
    "write_json_report",
    "write_csv",
]

_TENSOR_HEADER = "apranking-tensors 1"
_DTYPES = {"f32": "<f4", "f64": "<f8"}
_CKPT_MAGIC = b"APRKCKPT"
_CKPT_VERSION = 1


def write_tensors(path, tensors: dict) -> None:
    """Write named float arrays; dtype is preserved for float32/float64 and
    everything else is stored as float64."""
    lines = [_TENSOR_HEADER]
    payloads = []
    for name, arr in tensors.items():
        if any(ch.isspace() for ch in name) or not name:
            raise StructuralError(f"tensor name {name!r} must be non-empty without spaces")
        arr = np.asarray(arr)
        code = "f32" if arr.dtype == np.float32 else "f64"
        arr = np.ascontiguousarray(arr, dtype=_DTYPES[code])
        shape = ",".join(str(s) for s in arr.shape) or "1"
        if arr.ndim == 0:
            arr = arr.reshape(1)
        lines.append(f"{name} {code} {shape}")
        payloads.append(arr.tobytes())
    lines.append("end")
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("ascii"))
        for blob in payloads:
            fh.write(blob)


def read_tensors(path) -> dict:
    """Inverse of :func:`write_tensors`; round-trips bit-exactly."""
    with open(path, "rb") as fh:
        raw = fh.read()
    head, sep, rest = raw.partition(b"\nend\n")
    if not sep:
        raise StructuralError(f"{path}: missing manifest terminator")
    lines = head.decode("ascii").splitlines()
    if not lines or lines[0] != _TENSOR_HEADER:
        raise StructuralError(f"{path}: not an apranking tensor file")
    out = {}
    offset = 0
    for line in lines[1:]:
        try:
            name, code, shape_s = line.split(" ")
            shape = tuple(int(s) for s in shape_s.split(","))
            dtype = np.dtype(_DTYPES[code])
        except (ValueError, KeyError) as exc:
            raise StructuralError(f"{path}: bad manifest line {line!r}") from exc
        count = int(np.prod(shape))
        nbytes = count * dtype.itemsize
        blob = rest[offset : offset + nbytes]
        if len(blob) != nbytes:
            raise StructuralError(f"{path}: payload truncated for tensor {name!r}")
        out[name] = np.frombuffer(blob, dtype=dtype).reshape(shape).copy()
        offset += nbytes
    if offset != len(rest):
        raise StructuralError(f"{path}: {len(rest) - offset} trailing payload bytes")
    return out


def load_frame_embeddings(path, name: str = "teacher"):
    """Read one named (T, D') tensor as teacher-side frame embeddings."""
    from .pseudolabels import FrameEmbeddings

    tensors = read_tensors(path)
    if name not in tensors:
        raise StructuralError(f"{path}: no tensor named {name!r} (found {sorted(tensors)})")
    return FrameEmbeddings(tensors[name])


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def write_checkpoint(path, tensors: dict, config: dict) -> None:
    """Versioned binary checkpoint of float64 parameter tensors."""
    digest = bytes.fromhex(config_hash(config))
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<I", _CKPT_VERSION))
        fh.write(digest)
        fh.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors.items():
            # np.ascontiguousarray would promote 0-d parameters to 1-d
            arr = np.asarray(arr, dtype="<f8", order="C")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.tobytes())


def read_checkpoint(path) -> tuple[dict, str]:
    """Returns (tensors, config_hash_hex)."""
    with open(path, "rb") as fh:
        if fh.read(8) != _CKPT_MAGIC:
            raise StructuralError(f"{path}: not an apranking checkpoint")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != _CKPT_VERSION:
            raise StructuralError(f"{path}: unsupported checkpoint version {version}")
        digest = fh.read(32).hex()
        (count,) = struct.unpack("<I", fh.read(4))
        tensors = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<I", fh.read(4))
            shape = struct.unpack(f"<{ndim}Q", fh.read(8 * ndim)) if ndim else ()
            n = int(np.prod(shape)) if shape else 1
            blob = fh.read(8 * n)
            if len(blob) != 8 * n:
                raise StructuralError(f"{path}: truncated tensor {name!r}")
            tensors[name] = np.frombuffer(blob, dtype="<f8").reshape(shape).copy()
    return tensors, digest


def write_json_report(path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_csv(path, header: list, rows) -> None:
    """Plain CSV with shortest-round-trip float formatting."""

    def fmt(v):
        if v is None:
            return ""
        if isinstance(v, float):
            return repr(v)
        return str(v)

    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt(row.get(col)) for col in header) + "\n")
