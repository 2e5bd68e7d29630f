"""Binary checkpoint container and the multi-fold directory layout.

File layout::

    b"ATCGNNCK" | uint32 LE header length | UTF-8 JSON header | float64 LE payload

The header records the version tag, model dimensions, the tensor layout
(name, shape, offset), normalisation statistics, the training configuration,
the fold id and the metric trace. Parameters are stored bit-exactly.
"""

from __future__ import annotations

import json
import struct
import time
from pathlib import Path
from typing import Sequence

import numpy as np

from ..errors import CheckpointError, CheckpointVersionError
from ..scenario import NormalizationStats
from .model import ModelDims, ModelParams, param_shapes
from .training import CHECKPOINT_VERSION, Ensemble, ModelCheckpoint, TrainConfig

MAGIC = b"ATCGNNCK"
MANIFEST_NAME = "ensemble.manifest"


def _header(ckpt: ModelCheckpoint, deterministic: bool) -> dict:
    layout = []
    offset = 0
    for name, arr in ckpt.params.tensors.items():
        layout.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size
    return {
        "version": ckpt.version,
        "dims": ckpt.params.dims.to_dict(),
        "layout": layout,
        "n_values": offset,
        "stats": ckpt.stats.to_dict(),
        "config": ckpt.config.to_dict(),
        "fold": ckpt.fold,
        "trace": ckpt.trace,
        "metadata": ckpt.metadata,
        "created": None if deterministic else time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }


def checkpoint_bytes(ckpt: ModelCheckpoint, deterministic: bool = True) -> bytes:
    header = json.dumps(_header(ckpt, deterministic), sort_keys=True).encode("utf-8")
    payload = ckpt.params.flat().astype("<f8").tobytes()
    return MAGIC + struct.pack("<I", len(header)) + header + payload


def save_checkpoint(ckpt: ModelCheckpoint, path, deterministic: bool = True) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(checkpoint_bytes(ckpt, deterministic))
    return path


def parse_checkpoint(blob: bytes, source: str = "<bytes>") -> ModelCheckpoint:
    if len(blob) < len(MAGIC) + 4 or blob[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{source}: not a checkpoint file")
    (hlen,) = struct.unpack_from("<I", blob, len(MAGIC))
    start = len(MAGIC) + 4
    if len(blob) < start + hlen:
        raise CheckpointError(f"{source}: truncated header")
    try:
        header = json.loads(blob[start:start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{source}: corrupt header ({exc})") from exc
    version = header.get("version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(f"{source}: unsupported checkpoint version {version!r}, "
                                     f"expected {CHECKPOINT_VERSION!r}")
    payload = blob[start + hlen:]
    n_values = int(header["n_values"])
    if len(payload) != 8 * n_values:
        raise CheckpointError(f"{source}: payload has {len(payload)} bytes, expected {8 * n_values}")
    flat = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    try:
        dims = ModelDims(**header["dims"])
        shapes = param_shapes(dims)
        tensors = {}
        for entry in header["layout"]:
            shape = tuple(entry["shape"])
            if shapes.get(entry["name"]) != shape:
                raise CheckpointError(f"{source}: tensor {entry['name']} has unexpected shape {shape}")
            size = int(np.prod(shape))
            tensors[entry["name"]] = flat[entry["offset"]:entry["offset"] + size].reshape(shape).copy()
        params = ModelParams(dims, tensors)
        stats = NormalizationStats.from_dict(header["stats"])
        config = TrainConfig.from_dict(header["config"])
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"{source}: corrupt checkpoint ({exc})") from exc
    return ModelCheckpoint(params, stats, config, int(header["fold"]), list(header["trace"]),
                           version, dict(header.get("metadata", {})))


def load_checkpoint(path) -> ModelCheckpoint:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    return parse_checkpoint(blob, str(path))


def save_ensemble(members: Sequence[ModelCheckpoint], out_dir, deterministic: bool = True) -> Path:
    """Write ``fold_{k}/model.ckpt`` per member plus an ``ensemble.manifest`` index."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for k, m in enumerate(members):
        rel = f"fold_{k}/model.ckpt"
        save_checkpoint(m, out_dir / rel, deterministic)
        entries.append({"fold": m.fold, "path": rel})
    manifest = {"version": CHECKPOINT_VERSION, "members": entries}
    (out_dir / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out_dir


def load_ensemble(path) -> Ensemble:
    """Load from an ensemble directory, a manifest file, or a single checkpoint file."""
    path = Path(path)
    if path.is_file() and path.name != MANIFEST_NAME:
        return Ensemble([load_checkpoint(path)])
    manifest_path = path if path.is_file() else path / MANIFEST_NAME
    try:
        manifest = json.loads(manifest_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read ensemble manifest {manifest_path}: {exc}") from exc
    if manifest.get("version") != CHECKPOINT_VERSION:
        raise CheckpointVersionError(f"unsupported ensemble manifest version {manifest.get('version')!r}")
    root = manifest_path.parent
    return Ensemble([load_checkpoint(root / e["path"]) for e in manifest["members"]])
