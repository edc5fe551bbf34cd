"""Binary checkpoint format for trained taggers.

Layout, all little-endian: magic "WTCK", u32 format version, the model
spec (kind byte, block_len, n_mels, hidden_units, n_hidden, n_tags as
u32, dropout as f32), the tag vocabulary (u32 count, each tag u32 length
+ utf-8 bytes), the per-bin standardization vectors (u32 length, then
means and stds as f32), and the named parameters (u32 count, each: name,
u32 rank, dims, float32 payload). Save then load round-trips bit-exactly.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointFormatError
from .models import ModelSpec

MAGIC = b"WTCK"
VERSION = 1
_KIND_CODES = {"bob": 0, "jdc": 1}
_KIND_NAMES = {v: k for k, v in _KIND_CODES.items()}


def _write_str(fh, text: str) -> None:
    raw = text.encode("utf-8")
    fh.write(struct.pack("<I", len(raw)))
    fh.write(raw)


def _read_str(fh) -> str:
    (n,) = struct.unpack("<I", fh.read(4))
    return fh.read(n).decode("utf-8")


def save_checkpoint(path, spec: ModelSpec, tags: tuple,
                    feature_mean: np.ndarray, feature_std: np.ndarray,
                    params: dict) -> None:
    """Write spec, vocabulary, standardization vectors, and parameters.

    ``params`` maps names to arrays (autodiff tensors are unwrapped).
    """
    if len(tags) != spec.n_tags:
        raise ValueError(f"{len(tags)} tag names for a {spec.n_tags}-tag model")
    mean = np.ascontiguousarray(feature_mean, dtype="<f4")
    std = np.ascontiguousarray(feature_std, dtype="<f4")
    if mean.shape != (spec.n_mels,) or std.shape != (spec.n_mels,):
        raise ValueError("standardization vectors must have one entry per mel bin")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<BIIIIId",
                             _KIND_CODES[spec.kind], spec.block_len, spec.n_mels,
                             spec.hidden_units, spec.n_hidden, spec.n_tags,
                             spec.dropout))
        fh.write(struct.pack("<I", len(tags)))
        for tag in tags:
            _write_str(fh, tag)
        fh.write(struct.pack("<I", mean.size))
        fh.write(mean.tobytes())
        fh.write(std.tobytes())
        fh.write(struct.pack("<I", len(params)))
        for name, value in params.items():
            arr = np.ascontiguousarray(getattr(value, "data", value), dtype="<f4")
            _write_str(fh, name)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_checkpoint(path):
    """Read a checkpoint; returns (spec, tags, mean, std, params dict)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such checkpoint: {path}")
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise CheckpointFormatError(f"{path}: not a checkpoint file")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != VERSION:
            raise CheckpointFormatError(f"{path}: unsupported version {version}")
        kind_code, block_len, n_mels, hidden, n_hidden, n_tags, dropout = struct.unpack(
            "<BIIIIId", fh.read(29)
        )
        if kind_code not in _KIND_NAMES:
            raise CheckpointFormatError(f"{path}: unknown model kind code {kind_code}")
        spec = ModelSpec(kind=_KIND_NAMES[kind_code], block_len=block_len,
                         n_mels=n_mels, hidden_units=hidden, n_hidden=n_hidden,
                         n_tags=n_tags, dropout=dropout)
        (n_tag_names,) = struct.unpack("<I", fh.read(4))
        tags = tuple(_read_str(fh) for _ in range(n_tag_names))
        (n_bins,) = struct.unpack("<I", fh.read(4))
        mean = np.frombuffer(fh.read(4 * n_bins), dtype="<f4").copy()
        std = np.frombuffer(fh.read(4 * n_bins), dtype="<f4").copy()
        (n_params,) = struct.unpack("<I", fh.read(4))
        params = {}
        for _ in range(n_params):
            name = _read_str(fh)
            (rank,) = struct.unpack("<I", fh.read(4))
            dims = struct.unpack(f"<{rank}I", fh.read(4 * rank))
            count = int(np.prod(dims)) if rank else 1
            data = np.frombuffer(fh.read(4 * count), dtype="<f4")
            if data.size != count:
                raise CheckpointFormatError(f"{path}: truncated parameter {name!r}")
            params[name] = data.reshape(dims).copy()
    return spec, tags, mean, std, params
