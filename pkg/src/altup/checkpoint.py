"""Versioned binary checkpoints: named float64 tensors, little-endian.

Layout: magic, u32 format version, u64 header length, JSON header (config
echo plus ordered (name, shape) entries), then the concatenated row-major
float64 payload in header order. Round trips are bit-exact.
"""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"ALTC"
FORMAT_VERSION = 1


class CheckpointError(Exception):
    """Base class for checkpoint format violations."""


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError):
    pass


def save_checkpoint(path, named_arrays, config: dict | None = None):
    """Write (name, array) pairs in order, with a config echo in the header."""
    entries = [(name, np.asarray(a, dtype=np.float64)) for name, a in named_arrays]
    header = {
        "format_version": FORMAT_VERSION,
        "config": config or {},
        "tensors": [{"name": n, "shape": list(a.shape)} for n, a in entries],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for _, a in entries:
            fh.write(a.astype("<f8", copy=False).tobytes(order="C"))


def load_checkpoint(path):
    """Read a checkpoint -> (header dict, {name: array}). Strict validation."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 16 or raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version = struct.unpack("<I", raw[4:8])[0]
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"{path}: format version {version}, expected {FORMAT_VERSION}")
    header_len = struct.unpack("<Q", raw[8:16])[0]
    if len(raw) < 16 + header_len:
        raise CheckpointTruncatedError(f"{path}: header truncated")
    header = json.loads(raw[16:16 + header_len].decode("utf-8"))
    payload = raw[16 + header_len:]
    expected = sum(int(np.prod(t["shape"])) for t in header["tensors"]) * 8
    if len(payload) < expected:
        raise CheckpointTruncatedError(
            f"{path}: payload has {len(payload)} bytes, expected {expected}")
    if len(payload) > expected:
        raise CheckpointTruncatedError(
            f"{path}: {len(payload) - expected} unexpected trailing bytes")
    arrays = {}
    offset = 0
    for t in header["tensors"]:
        shape = tuple(t["shape"])
        count = int(np.prod(shape))
        arrays[t["name"]] = np.frombuffer(
            payload, dtype="<f8", count=count, offset=offset).reshape(shape).copy()
        offset += count * 8
    return header, arrays


def save_model(model, path, extra_config: dict | None = None):
    cfg = {
        "variant": model.variant,
        "d_model": model.cfg.d_model,
        "n_layers": model.cfg.n_layers,
        "n_heads": model.cfg.n_heads,
        "ffn_hidden": model.cfg.ffn_hidden,
        "vocab_size": model.cfg.vocab_size,
        "max_seq_len": model.cfg.max_seq_len,
    }
    if extra_config:
        cfg.update(extra_config)
    save_checkpoint(path, [(n, p.data) for n, p in model.named_parameters()], cfg)


def load_model(model, path):
    """Load parameters into a constructed model; names and shapes must match."""
    header, arrays = load_checkpoint(path)
    for name, p in model.named_parameters():
        if name not in arrays:
            raise CheckpointShapeError(f"{path}: missing tensor {name!r}")
        if arrays[name].shape != p.data.shape:
            raise CheckpointShapeError(
                f"{path}: tensor {name!r} has shape {arrays[name].shape}, "
                f"model expects {p.data.shape}")
        p.data[...] = arrays[name]
    extra = set(arrays) - {n for n, _ in model.named_parameters()}
    if extra:
        raise CheckpointShapeError(f"{path}: unexpected tensors {sorted(extra)}")
    return header
