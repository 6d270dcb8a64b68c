"""Run manifests: content hashes of inputs and outputs, resolved config,
seeds, and tool version, so any run can be reproduced exactly.

Wall-clock timestamps live only here; report files stay byte-stable.
"""

from __future__ import annotations

import datetime
import hashlib
import json
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def sha256_path(path: str | Path) -> str:
    """Content hash of a file, or of a directory tree (relative names
    and per-file hashes, in sorted order)."""
    p = Path(path)
    if not p.is_dir():
        return sha256_file(p)
    h = hashlib.sha256()
    for f in sorted(p.rglob("*")):
        if f.is_file():
            h.update(str(f.relative_to(p)).encode("utf-8"))
            h.update(bytes.fromhex(sha256_file(f)))
    return h.hexdigest()


def _utc_iso(ts: float) -> str:
    return datetime.datetime.fromtimestamp(ts, tz=datetime.timezone.utc).isoformat()


def build_manifest(command: str, config: dict, inputs: dict[str, str | Path],
                   outputs: dict[str, str | Path], started: float,
                   finished: float) -> dict:
    """Assemble the manifest dict; paths in inputs/outputs are hashed here."""
    return {
        "tool": "cursorlab",
        "version": __version__,
        "command": command,
        "config": config,
        "inputs": {str(k): sha256_path(v) for k, v in sorted(inputs.items())},
        "outputs": {str(k): sha256_path(v) for k, v in sorted(outputs.items())},
        "started_at": _utc_iso(started),
        "finished_at": _utc_iso(finished),
        "duration_s": round(finished - started, 3),
        "python": sys.version.split()[0],
        "numpy": np.__version__,
        "platform": platform.platform(),
    }


def write_manifest(path: str | Path, manifest: dict) -> None:
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
