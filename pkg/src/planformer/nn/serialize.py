"""Weight file format: one JSON manifest line, then a flat little-endian
float32 blob.  The manifest lists tensor names, shapes and byte offsets
into the blob plus caller-supplied metadata; the loader upcasts to float64.
"""

from __future__ import annotations

import json

import numpy as np

WEIGHTS_VERSION = "weights-v1"


class WeightFormatError(ValueError):
    pass


def save_tensors(path, tensors: dict[str, np.ndarray], meta: dict) -> None:
    entries = []
    offset = 0
    blobs = []
    for name, arr in tensors.items():
        arr32 = np.ascontiguousarray(arr, dtype="<f4")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(arr32.tobytes())
        offset += len(blobs[-1])
    manifest = {"version": WEIGHTS_VERSION, "meta": meta,
                "tensors": entries, "blob_bytes": offset}
    with open(path, "wb") as fh:
        fh.write(json.dumps(manifest).encode("utf-8") + b"\n")
        for b in blobs:
            fh.write(b)


def load_tensors(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        line = fh.readline()
        try:
            manifest = json.loads(line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise WeightFormatError(f"{path}: bad manifest: {exc}") from exc
        if manifest.get("version") != WEIGHTS_VERSION:
            raise WeightFormatError(f"{path}: unsupported version {manifest.get('version')!r}")
        blob = fh.read()
    if len(blob) != manifest["blob_bytes"]:
        raise WeightFormatError(
            f"{path}: truncated blob ({len(blob)} of {manifest['blob_bytes']} bytes)")
    out = {}
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=start)
        out[entry["name"]] = arr.reshape(shape).astype(np.float64)
    return manifest["meta"], out
