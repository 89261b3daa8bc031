"""CSV emission with a provenance comment line.

Floats are written with 17 significant digits so every value round-trips
exactly; the first line records the seed, the source revision and a hash
of the experiment configuration.
"""
from __future__ import annotations

import csv
import hashlib
import json
import subprocess
from functools import lru_cache
from pathlib import Path

import numpy as np

__all__ = ["format_value", "config_hash", "git_describe", "write_csv", "read_csv"]


def format_value(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, default=str, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@lru_cache(maxsize=1)
def git_describe() -> str:
    here = Path(__file__).resolve().parent
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=here, capture_output=True, text=True, timeout=10, check=True,
        )
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def write_csv(path, header, rows, seed, config: dict):
    """Write ``rows`` under ``header`` after the provenance comment line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(f"# seed={seed} git={git_describe()} config={config_hash(config)}\r\n")
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([format_value(v) for v in row])
    return path


def read_csv(path):
    """Return ``(comment, header, rows)`` with every cell as a string."""
    with open(path, newline="") as fh:
        comment = fh.readline().rstrip("\r\n")
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    return comment, header, rows
