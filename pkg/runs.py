"""
Run manifests: one JSON record per CLI invocation under the runs directory.
"""

import hashlib
import json
import logging
import os
from dataclasses import asdict, dataclass, field
from datetime import datetime

logger = logging.getLogger(__name__)

MANIFEST_NAME = 'manifest.json'


def sha256_file(path, block_size=1 << 20):
    digest = hashlib.sha256()
    with open(path, 'rb') as f:
        for block in iter(lambda: f.read(block_size), b''):
            digest.update(block)
    return digest.hexdigest()


@dataclass
class RunManifest:
    run_id: str
    subcommand: str
    config: dict
    inputs: dict
    outputs: dict
    seed: int
    started: str = ''
    wall_time: float = 0.0
    checksums: dict = field(default_factory=dict)
    status: str = 'ok'
    exit_code: int = 0

    def record_checksums(self):
        self.checksums = {
            name: sha256_file(path) for name, path in self.outputs.items()
            if isinstance(path, str) and os.path.isfile(path)
        }
        return self.checksums

    def save(self, runs_dir):
        run_dir = os.path.join(runs_dir, self.run_id)
        os.makedirs(run_dir, exist_ok=True)
        path = os.path.join(run_dir, MANIFEST_NAME)
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(asdict(self), f, indent=2, sort_keys=True)
        logger.info(f"Wrote run manifest {path}")
        return path

    @classmethod
    def load(cls, path):
        with open(path, encoding='utf-8') as f:
            return cls(**json.load(f))


def new_run_id(subcommand, now=None):
    now = now or datetime.now()
    return f"{now.strftime('%Y%m%d-%H%M%S-%f')}-{subcommand}"


def load_runs(runs_dir):
    """All readable manifests under `runs_dir`, newest first."""
    if not os.path.isdir(runs_dir):
        return []
    manifests = []
    for name in os.listdir(runs_dir):
        path = os.path.join(runs_dir, name, MANIFEST_NAME)
        if not os.path.isfile(path):
            continue
        try:
            manifests.append(RunManifest.load(path))
        except (OSError, ValueError, TypeError) as e:
            logger.warning(f"Skipping unreadable manifest {path}: {e}")
    manifests.sort(key=lambda m: (m.started, m.run_id), reverse=True)
    return manifests
