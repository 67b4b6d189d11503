"""Binary tensor container for checkpoints, heatmap dumps, and optimizer
state.

Layout (all integers little-endian):
  magic "LAPX" | u32 version=1 | u32 tensor count
  per tensor: u16 name length | UTF-8 name | u8 dtype tag (0 = float32)
              | u8 rank | u32 dims[rank] | raw little-endian float32 data

Writes go to a temporary file in the target directory followed by an atomic
rename, so a crashed write never leaves a partial file at the destination.
"""

from __future__ import annotations

import os
import struct
import tempfile

import numpy as np

__all__ = [
    "FormatError", "MissingTensorError", "ShapeMismatchError",
    "MAGIC", "VERSION", "save_tensors", "load_tensors",
    "save_model", "load_model",
]

MAGIC = b"LAPX"
VERSION = 1
_DTYPE_F32 = 0


class FormatError(ValueError):
    """The file is not a well-formed tensor container."""


class MissingTensorError(KeyError):
    """A tensor the model needs is absent from the file."""

    def __str__(self):
        return self.args[0] if self.args else ""


class ShapeMismatchError(ValueError):
    """A stored tensor's dims disagree with the model's tensor."""


def save_tensors(path: str, tensors: dict):
    """Write name -> array mappings atomically.  Arrays are stored as
    float32 in insertion order."""
    payload = bytearray()
    payload += MAGIC
    payload += struct.pack("<II", VERSION, len(tensors))
    for name, arr in tensors.items():
        # nb: ascontiguousarray would promote rank-0 arrays to rank 1;
        # tobytes() below serializes in C order whatever the layout
        data = np.asarray(arr, dtype="<f4")
        enc = name.encode("utf-8")
        if len(enc) > 0xFFFF:
            raise FormatError(f"tensor name too long: {name[:40]}...")
        payload += struct.pack("<H", len(enc))
        payload += enc
        payload += struct.pack("<BB", _DTYPE_F32, data.ndim)
        payload += struct.pack(f"<{data.ndim}I", *data.shape)
        payload += data.tobytes()

    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_tensors(path: str) -> dict:
    """Read a container back into an ordered name -> float32 array dict."""
    with open(path, "rb") as fh:
        buf = fh.read()

    def take(n, what):
        nonlocal off
        if off + n > len(buf):
            raise FormatError(f"truncated file: ran out of bytes reading {what}")
        piece = buf[off:off + n]
        off += n
        return piece

    off = 0
    if take(4, "magic") != MAGIC:
        raise FormatError(f"bad magic bytes, not a {MAGIC.decode()} container")
    version, count = struct.unpack("<II", take(8, "header"))
    if version != VERSION:
        raise FormatError(f"unsupported container version {version}")
    out = {}
    for i in range(count):
        (nlen,) = struct.unpack("<H", take(2, f"tensor {i} name length"))
        name = take(nlen, f"tensor {i} name").decode("utf-8")
        dtype, rank = struct.unpack("<BB", take(2, f"{name} dtype/rank"))
        if dtype != _DTYPE_F32:
            raise FormatError(f"unknown dtype tag {dtype} for {name}")
        dims = struct.unpack(f"<{rank}I", take(4 * rank, f"{name} dims"))
        nbytes = 4 * int(np.prod(dims, dtype=np.int64)) if rank else 4
        raw = take(nbytes, f"{name} data")
        out[name] = np.frombuffer(raw, dtype="<f4").reshape(dims).copy()
    if off != len(buf):
        raise FormatError(f"{len(buf) - off} trailing bytes after last tensor")
    return out


def _model_tensors(model) -> dict:
    tensors = {}
    for name, p in model.named_params():
        tensors[name] = p.data
    for name, b in model.named_buffers():
        tensors[name] = b
    return tensors


def save_model(model, path: str):
    """Checkpoint every parameter and buffer (BN running stats included)."""
    save_tensors(path, _model_tensors(model))


def load_model(model, path: str):
    """Restore a checkpoint in place.

    The whole file is validated against the model first, so a bad file never
    leaves the model partially mutated.
    """
    stored = load_tensors(path)
    targets = _model_tensors(model)
    for name, arr in targets.items():
        if name not in stored:
            raise MissingTensorError(f"missing tensor {name!r} in {path}")
        if stored[name].shape != arr.shape:
            raise ShapeMismatchError(
                f"tensor {name!r}: file has {stored[name].shape}, "
                f"model needs {arr.shape}")
    for name, arr in targets.items():
        arr[...] = stored[name]
