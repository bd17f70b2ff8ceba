"""Run manifests: one JSON per command run recording the resolved
configuration, input digests, outputs, and timing. Written atomically
at run end so a manifest always describes a completed run."""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from pathlib import Path
from typing import Mapping, Sequence

from . import __version__


def file_digest(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_run_manifest(
    out_dir: str | Path,
    command: str,
    config: Mapping,
    inputs: Sequence[str | Path],
    outputs: Sequence[str | Path],
    seed: int | None,
    wall_clock_seconds: float,
    name: str = "run_manifest.json",
) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {
        "command": command,
        "code_version": __version__,
        "config": dict(config),
        "seed": seed,
        "inputs": [
            {"path": str(p), "sha256": file_digest(p)} for p in inputs
        ],
        "outputs": [str(p) for p in outputs],
        "wall_clock_seconds": wall_clock_seconds,
    }
    target = out_dir / name
    fd, tmp = tempfile.mkstemp(dir=out_dir, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as f:
            f.write(json.dumps(payload, sort_keys=True, indent=1) + "\n")
        os.replace(tmp, target)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)
    return target
