"""Parameter files: a JSON manifest next to a raw little-endian float32 payload.

``<stem>.json`` holds the metadata and a parameter index; ``<stem>.bin`` holds
every array back to back in index order. Each index entry is
``{"group", "name", "shape", "offset", "count"}`` where ``offset`` and
``count`` are measured in float32 elements. The format needs nothing but a JSON
parser and a float reader, so attacks can load checkpoints without importing
the training code.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

FORMAT = "trgan-params/1"


def _paths(path) -> tuple[Path, Path]:
    path = Path(path)
    stem = path.with_suffix("") if path.suffix in (".json", ".bin") else path
    return stem.with_suffix(".json"), stem.with_suffix(".bin")


def write_params(path, groups: dict[str, dict[str, np.ndarray]], meta: dict) -> Path:
    manifest_path, payload_path = _paths(path)
    index = []
    offset = 0
    with open(payload_path, "wb") as fh:
        for group in sorted(groups):
            for name in sorted(groups[group]):
                arr = np.ascontiguousarray(groups[group][name], dtype="<f4")
                fh.write(arr.tobytes())
                index.append({"group": group, "name": name, "shape": list(arr.shape),
                              "offset": offset, "count": int(arr.size)})
                offset += int(arr.size)
    manifest = dict(meta)
    manifest["format"] = FORMAT
    manifest["payload"] = payload_path.name
    manifest["parameters"] = index
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    return manifest_path


def read_params(path) -> tuple[dict[str, dict[str, np.ndarray]], dict]:
    manifest_path, _ = _paths(path)
    with open(manifest_path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("format") != FORMAT:
        raise ValueError(f"{manifest_path}: unknown parameter file format {manifest.get('format')!r}")
    payload = np.fromfile(manifest_path.parent / manifest["payload"], dtype="<f4")
    groups: dict[str, dict[str, np.ndarray]] = {}
    for entry in manifest["parameters"]:
        start, count = entry["offset"], entry["count"]
        if start + count > payload.size:
            raise ValueError(f"{manifest_path}: payload truncated at {entry['group']}/{entry['name']}")
        arr = payload[start:start + count].reshape(entry["shape"]).astype(np.float32)
        groups.setdefault(entry["group"], {})[entry["name"]] = arr
    meta = {k: v for k, v in manifest.items() if k not in ("parameters", "payload", "format")}
    return groups, meta
