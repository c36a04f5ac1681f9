"""Checkpoint I/O.

A checkpoint is a directory holding

* ``manifest.json`` - format tag, training step, the full run config, and for
  every parameter its name, shape, byte offset and byte length;
* ``params.bin`` - the parameters as little-endian float32, concatenated in
  manifest order with no gaps.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import model as M
from . import tensor as tn
from .errors import CheckpointError, ConfigError

FORMAT = "utransformer-checkpoint/1"
MANIFEST = "manifest.json"
BLOB = "params.bin"
_LE_F32 = np.dtype("<f4")


def save_checkpoint(params, path, run=None, step: int = 0) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries, chunks, offset = [], [], 0
    for name, p in params.items():
        raw = np.ascontiguousarray(p.data, dtype=_LE_F32).tobytes()
        entries.append({"name": name, "shape": list(p.shape), "offset": offset,
                        "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    manifest = {
        "format": FORMAT,
        "dtype": "float32-le",
        "step": int(step),
        "config": None if run is None else run.to_dict(),
        "total_bytes": offset,
        "params": entries,
    }
    (path / BLOB).write_bytes(b"".join(chunks))
    (path / MANIFEST).write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n",
                                 encoding="utf-8")
    return path


def read_manifest(path) -> dict:
    mpath = Path(path) / MANIFEST
    try:
        manifest = json.loads(mpath.read_text(encoding="utf-8"))
    except OSError as exc:
        raise CheckpointError(f"cannot read {mpath}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{mpath}: invalid JSON ({exc})") from None
    if manifest.get("format") != FORMAT:
        raise CheckpointError(f"{mpath}: unsupported format {manifest.get('format')!r}")
    return manifest


def load_arrays(path) -> tuple:
    """(manifest, {name: float32 array}) after checking that offsets tile the blob."""
    path = Path(path)
    manifest = read_manifest(path)
    try:
        blob = (path / BLOB).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read {path / BLOB}: {exc.strerror}") from None
    arrays, cursor = {}, 0
    for e in manifest["params"]:
        name, shape = e["name"], tuple(e["shape"])
        expected = int(np.prod(shape, dtype=np.int64)) * _LE_F32.itemsize
        if e["offset"] != cursor:
            raise CheckpointError(f"offset mismatch for {name!r}: manifest says {e['offset']}, "
                                  f"expected {cursor}")
        if e["nbytes"] != expected:
            raise CheckpointError(f"size mismatch for {name!r}: {e['nbytes']} bytes for "
                                  f"shape {list(shape)}")
        if cursor + expected > len(blob):
            raise CheckpointError(f"truncated blob: {name!r} needs bytes "
                                  f"[{cursor}, {cursor + expected}) of {len(blob)}")
        arrays[name] = np.frombuffer(blob, _LE_F32, count=expected // 4,
                                     offset=cursor).reshape(shape)
        cursor += expected
    if cursor != len(blob):
        raise CheckpointError(f"blob has {len(blob) - cursor} trailing bytes beyond the manifest")
    return manifest, arrays


def load_checkpoint(path, cfg: M.ModelConfig = None) -> tuple:
    """Load parameters, checked against ``cfg`` (default: the stored config).

    Returns ``(params, run_config_or_None, manifest)``.
    """
    manifest, arrays = load_arrays(path)
    run = None
    if manifest.get("config") is not None:
        try:
            run = config_mod.from_dict(manifest["config"])
        except ConfigError as exc:
            raise CheckpointError(f"stored config is invalid: {exc}") from None
    if cfg is None:
        if run is None:
            raise CheckpointError("checkpoint has no config; pass a ModelConfig")
        cfg = run.model
    shapes = M.parameter_shapes(cfg)
    unknown = [n for n in arrays if n not in shapes]
    if unknown:
        raise CheckpointError(f"unknown parameter name(s): {', '.join(unknown)}")
    missing = [n for n in shapes if n not in arrays]
    if missing:
        raise CheckpointError(f"missing parameter(s): {', '.join(missing)}")
    params = M.Parameters()
    for name, shape in shapes.items():
        arr = arrays[name]
        if arr.shape != tuple(shape):
            raise CheckpointError(f"shape mismatch for {name!r}: checkpoint {list(arr.shape)}, "
                                  f"config {list(shape)}")
        params[name] = tn.parameter(arr.astype(cfg.np_dtype), name=name)
    return params, run, manifest
