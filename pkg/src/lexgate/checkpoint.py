"""Checkpoint serialization: JSON manifest plus a flat binary tensor file.

The manifest lists every tensor's name, shape, and byte offset into a sibling
file of little-endian float32 values stored in manifest order, and carries the
model configuration, the tokenizer vocabulary, and a format version. Training
finalises parameters at float32 precision, so save/load round-trips are
lossless and evaluation metrics are preserved exactly.
"""

import json
from pathlib import Path

import numpy as np

from .matrices import Tokenizer
from .model import ModelConfig, ModelParams

FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"
DATA_NAME = "params.bin"


def save_checkpoint(out_dir, params, tokenizer):
    """Write manifest.json and params.bin under ``out_dir``; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tensors = []
    offset = 0
    blobs = []
    for name in sorted(params.tensors):
        arr = params.tensors[name]
        blob = arr.astype("<f4").tobytes()
        tensors.append(
            {"name": name, "shape": list(arr.shape), "offset": offset, "numel": arr.size}
        )
        blobs.append(blob)
        offset += len(blob)
    manifest = {
        "format_version": FORMAT_VERSION,
        "kind": "lexgate-checkpoint",
        "config": params.config.to_dict(),
        "tokenizer": {"tokens": tokenizer.tokens},
        "data_file": DATA_NAME,
        "dtype": "float32",
        "byte_order": "little",
        "tensors": tensors,
    }
    (out_dir / DATA_NAME).write_bytes(b"".join(blobs))
    manifest_path = out_dir / MANIFEST_NAME
    manifest_path.write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    return manifest_path


def load_checkpoint(path):
    """Load (params, tokenizer) from a manifest path or its directory.

    Tensors come back as float64 arrays holding exactly the stored float32
    values.
    """
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    manifest = json.loads(path.read_text(encoding="utf-8"))
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format_version {version}")
    raw = (path.parent / manifest["data_file"]).read_bytes()
    tensors = {}
    for spec in manifest["tensors"]:
        count = spec["numel"]
        start = spec["offset"]
        flat = np.frombuffer(raw, dtype="<f4", count=count, offset=start)
        tensors[spec["name"]] = flat.astype(np.float64).reshape(spec["shape"])
    config = ModelConfig.from_dict(manifest["config"])
    tokenizer = Tokenizer(manifest["tokenizer"]["tokens"])
    return ModelParams(config, tensors), tokenizer
