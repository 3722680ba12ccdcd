"""Atomic, byte-stable run outputs: CSV tables, JSON manifests, field dumps."""
from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

ENV_OUTPUT_ROOT = "CHOQUARD_OUTPUT_ROOT"


def output_root(default: str | os.PathLike) -> Path:
    """The output root, overridden by the ``CHOQUARD_OUTPUT_ROOT`` variable."""
    return Path(os.environ.get(ENV_OUTPUT_ROOT) or default)


def atomic_write_bytes(path: str | os.PathLike, data: bytes) -> Path:
    """Write via a temporary file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def atomic_write_text(path, text: str) -> Path:
    return atomic_write_bytes(path, text.encode("utf-8"))


def fmt(v) -> str:
    """CSV cell: repr for floats (round-trips exactly), str otherwise."""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if hasattr(v, "dtype"):
        return fmt(v.item())
    if v is None:
        return ""
    return str(v)


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


def write_csv(path, header, rows) -> Path:
    return atomic_write_text(path, csv_text(header, rows))


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


RECORD_COLUMNS = ("id", "eps", "energy", "barycenter", "grad_norm", "nehari_residual", "sup_norm",
                  "iterations", "converged", "class_id", "classification", "seed_origin", "file")


@dataclass
class RunManifest:
    """Everything needed to rebuild the summaries of a run without recompute."""

    kind: str
    config_text: str
    code_version: str
    records: list[dict] = field(default_factory=list)
    classes: list[dict] = field(default_factory=list)
    verdicts: list[dict] = field(default_factory=list)
    tables: dict[str, str] = field(default_factory=dict)  # name -> file
    directory: str = ""

    def to_json(self) -> str:
        d = {k: getattr(self, k) for k in ("kind", "config_text", "code_version", "records",
                                           "classes", "verdicts", "tables")}
        return json.dumps(d, indent=2, sort_keys=True) + "\n"

    def record_rows(self) -> list[list]:
        return [[r[c] for c in RECORD_COLUMNS] for r in self.records]

    def write(self, directory) -> Path:
        """Write ``records.csv`` and ``manifest.json`` (the latter last)."""
        directory = Path(directory)
        write_csv(directory / "records.csv", RECORD_COLUMNS, self.record_rows())
        self.directory = str(directory)
        return atomic_write_text(directory / "manifest.json", self.to_json())

    @classmethod
    def load(cls, directory) -> "RunManifest":
        directory = Path(directory)
        d = json.loads((directory / "manifest.json").read_text(encoding="utf-8"))
        return cls(directory=str(directory), **d)
