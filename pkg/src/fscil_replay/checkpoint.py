"""Parameter checkpoints: a JSON manifest plus a flat little-endian float32 blob.

The manifest lists ``id``, ``shape`` and ``dtype`` for each parameter in
iteration order; the ``.bin`` file is the concatenation of every parameter's
values in that same order.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .autodiff import ParameterSet
from .errors import DatasetFormatError

FORMAT_VERSION = 1
_LE_F32 = np.dtype("<f4")


def checkpoint_manifest(params: ParameterSet, extra: Optional[dict] = None) -> dict:
    manifest = {
        "format_version": FORMAT_VERSION,
        "dtype": "float32",
        "byte_order": "little",
        "parameters": [{"id": name, "shape": list(p.shape)} for name, p in params.items()],
    }
    if extra:
        manifest.update(extra)
    return manifest


def checkpoint_bytes(params: ParameterSet) -> bytes:
    return b"".join(np.ascontiguousarray(p.data, dtype=_LE_F32).tobytes() for p in params.values())


def _stem(path: Union[str, Path]) -> Path:
    path = Path(path)
    return path.with_suffix("") if path.suffix in (".json", ".bin") else path


def save_checkpoint(params: ParameterSet, path: Union[str, Path], extra: Optional[dict] = None) -> tuple:
    """Write ``<stem>.json`` and ``<stem>.bin``; returns both paths."""
    stem = _stem(path)
    stem.parent.mkdir(parents=True, exist_ok=True)
    manifest = checkpoint_manifest(params, extra)
    manifest["blob"] = stem.with_suffix(".bin").name
    json_path, bin_path = stem.with_suffix(".json"), stem.with_suffix(".bin")
    json_path.write_text(json.dumps(manifest, indent=2, sort_keys=False) + "\n")
    bin_path.write_bytes(checkpoint_bytes(params))
    return json_path, bin_path


def load_checkpoint(path: Union[str, Path]) -> tuple:
    """Read a checkpoint back as ``({id: float32 array}, manifest)``."""
    stem = _stem(path)
    json_path = stem.with_suffix(".json")
    try:
        manifest = json.loads(json_path.read_text())
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"bad checkpoint manifest: {exc.msg}", json_path, exc.lineno) from None
    if manifest.get("dtype") != "float32":
        raise DatasetFormatError(f"unsupported dtype {manifest.get('dtype')!r}", json_path)
    blob = (stem.parent / manifest.get("blob", stem.with_suffix(".bin").name)).read_bytes()
    flat = np.frombuffer(blob, dtype=_LE_F32)
    arrays, offset = {}, 0
    for entry in manifest["parameters"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape, dtype=np.int64))
        if offset + n > flat.size:
            raise DatasetFormatError(
                f"blob too short for parameter {entry['id']!r} at element offset {offset}", json_path
            )
        arrays[entry["id"]] = flat[offset:offset + n].reshape(shape).astype(np.float32)
        offset += n
    if offset != flat.size:
        raise DatasetFormatError(f"blob has {flat.size - offset} trailing values", json_path)
    return arrays, manifest
