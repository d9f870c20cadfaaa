"""Run manifest (config hash, seeds, file checksums, versions) and run summaries."""
from __future__ import annotations

import hashlib
import io
import json
import platform
from dataclasses import asdict, dataclass, field
from importlib import metadata
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional

from loguru import logger
from rich.console import Console
from rich.table import Table

from . import __version__
from .paths import atomic_write_text

MANIFEST_NAME = "manifest.json"
SUMMARY_JSON = "summary.json"
SUMMARY_TXT = "summary.txt"
_TRACKED_PACKAGES = ("numpy", "scipy", "pandas", "pydantic")
_CHUNK = 1 << 20


def file_sha256(path: Path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as f:
        for chunk in iter(lambda: f.read(_CHUNK), b""):
            h.update(chunk)
    return h.hexdigest()


def package_versions() -> Dict[str, str]:
    out = {"neuroquansa": __version__, "python": platform.python_version()}
    for name in _TRACKED_PACKAGES:
        try:
            out[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            out[name] = "unknown"
    return out


@dataclass
class ResultManifest:
    config_hash: str
    kind: str
    seeds: Dict[str, int] = field(default_factory=dict)
    files: Dict[str, str] = field(default_factory=dict)
    versions: Dict[str, str] = field(default_factory=package_versions)

    def add_seed(self, label: str, seed: int) -> None:
        self.seeds[label] = int(seed)

    def collect(self, out_dir: Path) -> None:
        """Checksum every file under out_dir except the manifest itself."""
        root = Path(out_dir)
        self.files = {
            p.relative_to(root).as_posix(): file_sha256(p)
            for p in sorted(root.rglob("*"))
            if p.is_file() and p.name != MANIFEST_NAME and ".part-" not in p.name
        }

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    def write(self, out_dir: Path) -> Path:
        self.collect(out_dir)
        path = atomic_write_text(Path(out_dir) / MANIFEST_NAME, self.to_json())
        logger.bind(action="manifest", status="ok", files=len(self.files)).info(f"manifest: {path}")
        return path

    @classmethod
    def read(cls, path: Path) -> "ResultManifest":
        return cls(**json.loads(Path(path).read_text(encoding="utf-8")))


def _cell(value: Any) -> str:
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def render_summary(title: str, summary: Mapping[str, Any], tables: Optional[Mapping[str, List[Mapping[str, Any]]]] = None) -> str:
    """Plain-text rendering of a summary and optional row tables."""
    console = Console(record=True, width=110, file=io.StringIO(), color_system=None)
    overview = Table(title=title, show_header=False)
    overview.add_column("key", style="bold")
    overview.add_column("value")
    for key, value in summary.items():
        if not isinstance(value, (dict, list)):
            overview.add_row(key, _cell(value))
    console.print(overview)
    for name, rows in (tables or {}).items():
        if not rows:
            continue
        table = Table(title=name)
        columns = list(rows[0].keys())
        for col in columns:
            table.add_column(col)
        for row in rows:
            table.add_row(*(_cell(row.get(c, "")) for c in columns))
        console.print(table)
    return console.export_text()


def write_summary(
    out_dir: Path,
    title: str,
    summary: Mapping[str, Any],
    tables: Optional[Mapping[str, List[Mapping[str, Any]]]] = None,
) -> Path:
    out = Path(out_dir)
    payload = dict(summary)
    if tables:
        payload["tables"] = {k: list(v) for k, v in tables.items()}
    atomic_write_text(out / SUMMARY_JSON, json.dumps(payload, indent=2, sort_keys=True, default=_cell) + "\n")
    return atomic_write_text(out / SUMMARY_TXT, render_summary(title, summary, tables))
