"""Artifact writing: atomic files, round-trip floats, run manifests."""

from __future__ import annotations

import json
import os
import sys
import tempfile

import numpy as np

__all__ = ["fmt17", "write_text_atomic", "write_csv_atomic",
           "write_json_atomic", "ArtifactDir", "read_csv_columns"]


def fmt17(value):
    """Format one CSV cell; floats keep full 17-significant-digit form."""
    if isinstance(value, str):
        return value
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), ".17g")


def write_text_atomic(path, text):
    """Write text via a temporary file and rename, never partial files."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv_atomic(path, header, rows):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(fmt17(v) for v in row))
    write_text_atomic(path, "\n".join(lines) + "\n")


def write_json_atomic(path, obj):
    write_text_atomic(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_csv_columns(path):
    """Read a numeric CSV written by this package into {column: array}."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        data = [line.strip().split(",") for line in fh if line.strip()]
    cols = {}
    for j, name in enumerate(header):
        cols[name] = np.array([float(row[j]) for row in data])
    return cols


class ArtifactDir:
    """Output directory that records artifacts and writes the manifest."""

    def __init__(self, out_dir):
        self.out_dir = os.path.abspath(out_dir)
        os.makedirs(self.out_dir, exist_ok=True)
        self.artifacts = []

    def path(self, name):
        return os.path.join(self.out_dir, name)

    def write_csv(self, name, header, rows):
        write_csv_atomic(self.path(name), header, rows)
        self.artifacts.append(name)

    def write_json(self, name, obj):
        write_json_atomic(self.path(name), obj)
        self.artifacts.append(name)

    def write_manifest(self, run_config):
        from . import __version__
        import scipy
        manifest = {
            "command": run_config.command,
            "config_sha256": run_config.hash(),
            "seed": run_config.seed,
            "versions": {
                "kernelshift": __version__,
                "numpy": np.__version__,
                "scipy": scipy.__version__,
                "python": ".".join(str(v) for v in sys.version_info[:3]),
            },
            "artifacts": sorted(self.artifacts),
        }
        if run_config.figure is not None:
            manifest["figure"] = run_config.figure
        write_json_atomic(self.path("manifest.json"), manifest)

    def echo_config(self, run_config):
        write_json_atomic(self.path("config.echo.json"), run_config.doc)
        self.artifacts.append("config.echo.json")
