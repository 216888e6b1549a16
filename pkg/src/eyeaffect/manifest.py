"""Run manifests: config snapshot, input hashes, seed, output paths.

A manifest pins everything a stage consumed and produced, so re-running
with identical inputs is checkable byte-for-byte. Serialization is
deterministic (sorted keys, no timestamps).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int | None = None
    inputs: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)
    version: str = __version__

    def add_input(self, path):
        self.inputs[str(path)] = file_digest(path)

    def add_inputs(self, paths):
        for p in sorted(str(p) for p in paths):
            self.inputs[p] = file_digest(p)

    def add_output(self, path):
        p = str(path)
        if p not in self.outputs:
            self.outputs.append(p)

    def to_json(self) -> str:
        payload = {
            "version": self.version,
            "command": self.command,
            "seed": self.seed,
            "config": self.config,
            "inputs": dict(sorted(self.inputs.items())),
            "outputs": sorted(self.outputs),
        }
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"

    def write(self, path):
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(self.to_json(), encoding="utf-8")


def read_manifest(path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))
