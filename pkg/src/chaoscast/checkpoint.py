"""Checkpoint persistence.

A checkpoint is two files sharing a stem: `<stem>.json`, a manifest
holding the model config, counters, data-stream position, and a tensor
index (name, shape, dtype, byte offset); and `<stem>.bin`, the tensors
concatenated as little-endian IEEE-754 in index order. Saving the same
state twice produces byte-identical files.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CheckpointMismatch, UnreadableFile
from .model import ModelConfig, Params, param_shapes

FORMAT = "chaoscast-checkpoint-v1"

_DTYPE_TAGS = {"<f8": np.dtype("<f8"), "<f4": np.dtype("<f4")}


@dataclass
class Checkpoint:
    model_config: ModelConfig
    params: Params
    step: int = 0
    samples_seen: int = 0
    stream_index: int = 0
    adam_m: Params | None = None
    adam_v: Params | None = None
    train_config: dict | None = None


def _tensor_items(ckpt: Checkpoint):
    for name, arr in ckpt.params.items():
        yield "param." + name, arr
    if ckpt.adam_m is not None:
        for name, arr in ckpt.adam_m.items():
            yield "adam_m." + name, arr
    if ckpt.adam_v is not None:
        for name, arr in ckpt.adam_v.items():
            yield "adam_v." + name, arr


def save_checkpoint(ckpt: Checkpoint, stem: str | Path) -> tuple[Path, Path]:
    """Write `<stem>.json` and `<stem>.bin`; returns both paths."""
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    index = []
    offset = 0
    chunks = []
    for name, arr in _tensor_items(ckpt):
        arr = np.ascontiguousarray(arr)
        tag = "<f4" if arr.dtype == np.float32 else "<f8"
        data = arr.astype(_DTYPE_TAGS[tag], copy=False).tobytes()
        index.append(
            {"name": name, "shape": list(arr.shape), "dtype": tag, "offset": offset}
        )
        offset += len(data)
        chunks.append(data)
    manifest = {
        "format": FORMAT,
        "model_config": dataclasses.asdict(ckpt.model_config),
        "step": ckpt.step,
        "samples_seen": ckpt.samples_seen,
        "stream_index": ckpt.stream_index,
        "train_config": ckpt.train_config,
        "n_bytes": offset,
        "tensors": index,
    }
    json_path = stem.with_suffix(".json")
    bin_path = stem.with_suffix(".bin")
    json_path.write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n")
    bin_path.write_bytes(b"".join(chunks))
    return json_path, bin_path


def load_checkpoint(stem: str | Path) -> Checkpoint:
    """Load a checkpoint, validating tensor names and shapes against the
    stored model config."""
    stem = Path(stem)
    if stem.suffix == ".json":
        stem = stem.with_suffix("")
    json_path = stem.with_suffix(".json")
    bin_path = stem.with_suffix(".bin")
    try:
        manifest = json.loads(json_path.read_text())
        blob = bin_path.read_bytes()
    except OSError as exc:
        raise UnreadableFile(f"cannot read checkpoint {stem}: {exc}") from exc
    if manifest.get("format") != FORMAT:
        raise CheckpointMismatch(f"unrecognized checkpoint format in {json_path}")
    cfg = ModelConfig(**manifest["model_config"])
    expected = param_shapes(cfg)

    tensors: dict[str, np.ndarray] = {}
    for entry in manifest["tensors"]:
        dtype = _DTYPE_TAGS.get(entry["dtype"])
        if dtype is None:
            raise CheckpointMismatch(f"unsupported tensor dtype {entry['dtype']}")
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        end = start + count * dtype.itemsize
        if end > len(blob):
            raise CheckpointMismatch(f"tensor {entry['name']} overruns binary file")
        arr = np.frombuffer(blob, dtype=dtype, count=count, offset=start)
        tensors[entry["name"]] = arr.reshape(shape).copy()

    def collect(prefix: str) -> Params:
        group = {
            name[len(prefix):]: arr
            for name, arr in tensors.items()
            if name.startswith(prefix)
        }
        if set(group) != set(expected):
            missing = set(expected) - set(group)
            extra = set(group) - set(expected)
            raise CheckpointMismatch(
                f"tensor names under '{prefix}' do not match config "
                f"(missing={sorted(missing)}, extra={sorted(extra)})"
            )
        for name, arr in group.items():
            if arr.shape != expected[name]:
                raise CheckpointMismatch(
                    f"{prefix}{name} has shape {arr.shape}, expected {expected[name]}"
                )
        return {name: group[name] for name in expected}

    params = collect("param.")
    has_m = any(n.startswith("adam_m.") for n in tensors)
    has_v = any(n.startswith("adam_v.") for n in tensors)
    return Checkpoint(
        model_config=cfg,
        params=params,
        step=manifest["step"],
        samples_seen=manifest["samples_seen"],
        stream_index=manifest["stream_index"],
        adam_m=collect("adam_m.") if has_m else None,
        adam_v=collect("adam_v.") if has_v else None,
        train_config=manifest.get("train_config"),
    )
