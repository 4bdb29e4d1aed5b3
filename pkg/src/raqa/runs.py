"""Experiment run directories, manifests, and report emission.

Layout: runs/<run_id>/{manifest.json, checkpoints/, rationales/, reports/}.
The run id derives from the resolved configuration fingerprint, never from
wall-clock time, so identical configurations map to identical artifact
names. Reports carry no timestamps (those live in the manifest only),
keeping re-runs byte-identical.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Optional


class RunError(Exception):
    pass


class RunLocked(RunError):
    pass


def config_fingerprint(config: dict) -> str:
    payload = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


def resolve_config(
    defaults: dict, file_path: Optional[str | Path] = None, overrides: Optional[dict] = None
) -> dict:
    """Layered configuration: defaults < config file < explicit overrides."""
    resolved = dict(defaults)
    if file_path:
        loaded = json.loads(Path(file_path).read_text(encoding="utf-8"))
        if not isinstance(loaded, dict):
            raise RunError(f"config file {file_path} must hold a JSON object")
        resolved.update(loaded)
    for key, value in (overrides or {}).items():
        if value is not None:
            resolved[key] = value
    return resolved


@dataclass
class RunManifest:
    run_id: str
    command: str
    config_snapshot: dict
    seeds: list[int]
    artifact_paths: dict[str, str] = field(default_factory=dict)
    started_at: Optional[float] = None
    finished_at: Optional[float] = None

    def register(self, name: str, path: str | Path) -> Path:
        self.artifact_paths[name] = str(path)
        return Path(path)

    def save(self, path: str | Path) -> None:
        payload = {
            "run_id": self.run_id,
            "command": self.command,
            "config_snapshot": self.config_snapshot,
            "seeds": self.seeds,
            "artifact_paths": self.artifact_paths,
            "started_at": self.started_at,
            "finished_at": self.finished_at,
        }
        Path(path).write_text(
            json.dumps(payload, sort_keys=True, indent=2), encoding="utf-8"
        )

    @classmethod
    def load(cls, path: str | Path) -> "RunManifest":
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(**obj)


class RunDirectory:
    """One experiment's artifact tree plus its manifest and lock file."""

    def __init__(self, root: str | Path, command: str, config: dict, seeds: Iterable[int]):
        self.config = dict(config)
        self.fingerprint = config_fingerprint(self.config)
        self.root = Path(root)
        self.path = self.root / f"{command}-{self.fingerprint}"
        self.manifest = RunManifest(
            run_id=self.path.name,
            command=command,
            config_snapshot=self.config,
            seeds=list(seeds),
        )

    def prepare(self) -> "RunDirectory":
        for sub in ("checkpoints", "rationales", "reports"):
            (self.path / sub).mkdir(parents=True, exist_ok=True)
        return self

    @contextmanager
    def locked(self):
        """Exclusive ownership of the run directory for one process."""
        self.prepare()
        lock = self.path / ".lock"
        try:
            fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise RunLocked(f"run directory {self.path} is locked by another process")
        try:
            os.write(fd, str(os.getpid()).encode())
            os.close(fd)
            self.manifest.started_at = time.time()
            yield self
        finally:
            self.manifest.finished_at = time.time()
            self.manifest.save(self.path / "manifest.json")
            lock.unlink(missing_ok=True)

    def report_path(self, name: str) -> Path:
        return self.manifest.register(f"report:{name}", self.path / "reports" / name)

    def checkpoint_path(self, name: str) -> Path:
        return self.manifest.register(
            f"checkpoint:{name}", self.path / "checkpoints" / name
        )

    def rationale_path(self, name: str) -> Path:
        return self.manifest.register(
            f"rationales:{name}", self.path / "rationales" / name
        )


def write_report(path: str | Path, payload: dict) -> None:
    """Deterministic JSON report (sorted keys, no timestamps)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(
        json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )


def write_method_csv(path: str | Path, rows: list[dict], columns: list[str]) -> None:
    """Flat CSV summary used for cross-method aggregation tables."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row.get(k, "") for k in columns})
