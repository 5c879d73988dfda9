"""Output plumbing: trajectory/jump CSV export, check-report records with a
published JSON schema, and run manifests for replay."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .integrator import Trajectory


def _jsonable(obj):
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")

# Schema for a single check report: every numeric claim carries value,
# stderr or tolerance, and a verdict.
REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["name", "value", "passed", "config_hash", "seed", "version"],
    "properties": {
        "name": {"type": "string"},
        "value": {"type": "number"},
        "stderr": {"type": ["number", "null"]},
        "tolerance": {"type": ["number", "null"]},
        "passed": {"type": "boolean"},
        "config_hash": {"type": "string"},
        "seed": {"type": "integer"},
        "version": {"type": "string"},
        "detail": {"type": "object"},
    },
    "additionalProperties": False,
}


def make_report(
    name: str,
    value: float,
    passed: bool,
    config_hash: str,
    seed: int,
    version: str,
    stderr: float | None = None,
    tolerance: float | None = None,
    detail: dict | None = None,
) -> dict:
    return {
        "name": name,
        "value": float(value),
        "stderr": None if stderr is None else float(stderr),
        "tolerance": None if tolerance is None else float(tolerance),
        "passed": bool(passed),
        "config_hash": config_hash,
        "seed": seed,
        "version": version,
        "detail": detail or {},
    }


def write_json(path: Path, payload) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")


def write_trajectory_rows(writer, traj: Trajectory) -> None:
    for i, t in enumerate(traj.times):
        for k in range(traj.m):
            writer.writerow([traj.path_id, f"{t:.10g}", k + 1, f"{traj.states[i, k]:.17g}"])


def write_trajectories_csv(path: Path, trajectories: list[Trajectory]) -> None:
    """Columns (path_id, t, k, coeff), one row per mode per time."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path_id", "t", "k", "coeff"])
        for traj in trajectories:
            write_trajectory_rows(writer, traj)


def write_jump_events_csv(path: Path, trajectories: list[Trajectory]) -> None:
    """Columns (path_id, t, z)."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path_id", "t", "z"])
        for traj in trajectories:
            for pid, t, z in traj.jump_log:
                writer.writerow([pid, f"{t:.10g}", f"{z:.17g}"])


@dataclass
class RunManifest:
    """Replay information embedded in every run directory."""

    command: str
    config_hash: str
    seed: int
    version: str
    workers: int = 1
    reports: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "command": self.command,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "version": self.version,
            "workers": self.workers,
            "n_reports": len(self.reports),
        }
