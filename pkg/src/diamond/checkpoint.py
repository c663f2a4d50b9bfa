"""DMCKPT1 checkpoint files.

Layout: ``b"DMCKPT1"`` plus one zero byte, a little-endian uint32 manifest
length, a UTF-8 JSON manifest (model config, scalar dtype, and a
``name / shape / offset`` entry per tensor), then the raw little-endian
payload. Offsets are bytes from the start of the payload.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .config import ModelConfig
from .errors import CheckpointError, ConfigError, DimensionError
from .model import DiaMond

MAGIC = b"DMCKPT1\x00"
_DTYPES = {"float64": "<f8", "float32": "<f4"}


def save_checkpoint(model: DiaMond, path) -> None:
    dtype = np.dtype(_DTYPES[model.cfg.precision])
    entries, blobs, offset = [], [], 0
    for name, arr in model.state_dict().items():
        raw = np.ascontiguousarray(arr, dtype=dtype).tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(raw)
        offset += len(raw)
    manifest = {
        "config": model.cfg.to_dict(),
        "dtype": dtype.str,
        "regbn_fitted": bool(model.regbn.fitted),
        "tensors": entries,
        "payload_bytes": offset,
    }
    header = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for raw in blobs:
            fh.write(raw)


def read_manifest(path) -> dict:
    data = Path(path).read_bytes()
    manifest, _ = _parse(data)
    return manifest


def _parse(data: bytes) -> tuple[dict, memoryview]:
    if len(data) < len(MAGIC) + 4 or data[: len(MAGIC)] != MAGIC:
        raise CheckpointError("not a DMCKPT1 checkpoint (bad magic)")
    (length,) = struct.unpack_from("<I", data, len(MAGIC))
    start = len(MAGIC) + 4
    if start + length > len(data):
        raise CheckpointError("checkpoint manifest is truncated")
    try:
        manifest = json.loads(data[start : start + length].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"checkpoint manifest is not valid JSON: {exc}") from None
    payload = memoryview(data)[start + length :]
    if len(payload) != manifest.get("payload_bytes", -1):
        raise CheckpointError(
            f"checkpoint payload holds {len(payload)} bytes, manifest declares {manifest.get('payload_bytes')}"
        )
    return manifest, payload


def load_checkpoint(path, expected: ModelConfig | None = None) -> DiaMond:
    """Rebuild a model from ``path``; ``expected`` guards geometry before loading weights."""
    manifest, payload = _parse(Path(path).read_bytes())
    try:
        cfg = ModelConfig.from_dict(manifest["config"])
        cfg.validate()
    except (ConfigError, TypeError, KeyError) as exc:
        raise CheckpointError(f"checkpoint config is invalid: {exc}") from None
    if expected is not None:
        for key in ("dims", "block_size", "patch_size", "embed_dim"):
            if getattr(cfg, key) != getattr(expected, key):
                raise CheckpointError(
                    f"checkpoint {key}={getattr(cfg, key)} does not match requested {getattr(expected, key)}"
                )
    dtype = np.dtype(manifest["dtype"])
    state = {}
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = entry["offset"] + count * dtype.itemsize
        if end > len(payload):
            raise CheckpointError(f"tensor {entry['name']} runs past the end of the payload")
        arr = np.frombuffer(payload[entry["offset"] : end], dtype=dtype).reshape(shape)
        state[entry["name"]] = arr.astype(cfg.dtype)
    model = DiaMond(cfg)
    try:
        model.load_state_dict(state, fitted=bool(manifest.get("regbn_fitted", True)))
    except (ConfigError, DimensionError) as exc:
        raise CheckpointError(str(exc)) from None
    return model
