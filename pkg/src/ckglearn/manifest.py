"""Run manifests: one JSON record per output directory describing the run."""
from __future__ import annotations

import json
import os
import tempfile
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

MANIFEST_NAME = "manifest.json"


@dataclass
class RunManifest:
    """What produced an output directory: command, inputs, config, fingerprints."""

    command: str
    config_path: str | None = None
    seed: int | None = None
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    resolved_config: dict = field(default_factory=dict)
    checkpoint_fingerprint: str | None = None
    notes: dict = field(default_factory=dict)
    started_at: float = field(default_factory=time.time)
    finished_at: float | None = None

    def write(self, out_dir: str | Path) -> Path:
        """Atomically write ``manifest.json`` into the output directory."""
        self.finished_at = time.time()
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        target = out_dir / MANIFEST_NAME
        fd, tmp = tempfile.mkstemp(dir=out_dir, suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as handle:
                json.dump(asdict(self), handle, indent=2, sort_keys=True)
                handle.write("\n")
            os.replace(tmp, target)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        return target
