"""Model checkpoints: a JSON manifest next to a little-endian float64 blob."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import IntegrityError
from .models import KnnConfig, MlpConfig, NeuralClassifier, TransformerConfig, KnnClassifier

FORMAT_VERSION = 1
_DTYPE = np.dtype("<f8")


def _paths(path) -> tuple[Path, Path]:
    path = Path(path)
    return path.with_suffix(".json"), path.with_suffix(".bin")


def save_checkpoint(model, path, seed: int = 0, metrics: Optional[dict] = None, extra: Optional[dict] = None) -> Path:
    """Write ``<path>.json`` and ``<path>.bin``; returns the manifest path.

    Parameters are stored in sorted-name order so two saves of the same model
    produce identical files.
    """
    manifest_path, blob_path = _paths(path)
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    names = sorted(model.params)
    index, chunks, offset = [], [], 0
    for name in names:
        arr = np.ascontiguousarray(model.params[name].data, dtype=_DTYPE)
        index.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.size
    blob = b"".join(chunks)
    manifest = {
        "format_version": FORMAT_VERSION,
        "model": model.kind,
        "config": dataclasses.asdict(model.cfg),
        "seed": int(seed),
        "metrics": metrics or {},
        "params": index,
        "n_values": offset,
        "blob": blob_path.name,
        "sha256": hashlib.sha256(blob).hexdigest(),
    }
    if extra:
        manifest["extra"] = extra
    blob_path.write_bytes(blob)
    manifest_path.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return manifest_path


def load_checkpoint(path):
    """Rebuild the model saved at ``path``; returns ``(model, manifest)``.

    Raises IntegrityError if the blob is missing, truncated or altered.
    """
    manifest_path, _ = _paths(path)
    try:
        manifest = json.loads(manifest_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise IntegrityError(f"unreadable checkpoint manifest {manifest_path}: {exc}") from exc
    blob_path = manifest_path.parent / manifest.get("blob", "")
    try:
        blob = blob_path.read_bytes()
    except OSError as exc:
        raise IntegrityError(f"missing checkpoint blob {blob_path}") from exc
    if hashlib.sha256(blob).hexdigest() != manifest.get("sha256"):
        raise IntegrityError(f"checkpoint blob {blob_path} does not match its recorded sha256")
    if len(blob) != 8 * manifest["n_values"]:
        raise IntegrityError("checkpoint blob length disagrees with the manifest")

    kind = manifest["model"]
    if kind == "knn":
        return KnnClassifier(KnnConfig(**manifest["config"])), manifest
    cfg_cls = TransformerConfig if kind.endswith("transformer") else MlpConfig
    cfg = cfg_cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in manifest["config"].items()})
    model = NeuralClassifier(kind, cfg)
    values = np.frombuffer(blob, dtype=_DTYPE)
    if sorted(model.params) != [e["name"] for e in manifest["params"]]:
        raise IntegrityError("checkpoint parameter names do not match the model layout")
    for entry in manifest["params"]:
        t = model.params[entry["name"]]
        size = int(np.prod(entry["shape"], dtype=np.int64))
        if tuple(entry["shape"]) != t.shape:
            raise IntegrityError(f"shape mismatch for {entry['name']}: {entry['shape']} vs {t.shape}")
        t.data[...] = values[entry["offset"] : entry["offset"] + size].reshape(t.shape)
    return model, manifest
