"""Persistent storage of run artifacts and manifests."""

import csv
import io
import json
import logging
import os
import tempfile
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from .config import DEFAULT_OUTPUT_DIR, FLOAT_FORMAT, MANIFEST_NAME
from .control_set import ControlField, control_from_rows
from .exceptions import ConfigurationError

logger = logging.getLogger(__name__)


def format_cell(value: Any) -> str:
    """Render one CSV cell; floats get 17 significant digits."""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), FLOAT_FORMAT)
    return str(value)


def _json_default(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer, np.bool_)):
        return value.item()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


class ResultStore:
    """Owns an output directory and writes every artifact atomically."""

    def __init__(self, output_dir: Path = DEFAULT_OUTPUT_DIR) -> None:
        """Initialize the store.

        Args:
            output_dir: Directory receiving the artifacts; created on first write.
        """
        self.output_dir = Path(output_dir)
        self.written: List[str] = []

    def _ensure_output_dir(self) -> None:
        self.output_dir.mkdir(parents=True, exist_ok=True)

    def _write_atomic(self, name: str, text: str) -> Path:
        """Write ``text`` to a temporary file in the target directory, then rename it."""
        self._ensure_output_dir()
        target = self.output_dir / name
        fd, tmp_name = tempfile.mkstemp(prefix=f".{name}.", dir=self.output_dir)
        try:
            with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
                f.write(text)
            os.replace(tmp_name, target)
        except Exception as e:
            logger.error(f"Failed to write {target}: {e}")
            if os.path.exists(tmp_name):
                os.unlink(tmp_name)
            raise
        if name not in self.written:
            self.written.append(name)
        logger.debug(f"Wrote {target}")
        return target

    def write_csv(self, name: str, header: Sequence[str], rows: Sequence[Sequence[Any]]) -> Path:
        """Write a CSV artifact with a mandatory header row.

        Args:
            name: File name inside the output directory.
            header: Column names.
            rows: Row values; floats are printed with 17 significant digits.

        Returns:
            Path of the written file.
        """
        if not header:
            raise ConfigurationError(f"CSV artifact {name} needs a header")
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_cell(value) for value in row])
        return self._write_atomic(name, buffer.getvalue())

    def write_json(self, name: str, payload: Dict[str, Any]) -> Path:
        text = json.dumps(
            payload, indent=2, sort_keys=True, ensure_ascii=False, default=_json_default
        )
        return self._write_atomic(name, text + "\n")

    def write_manifest(self, manifest: Dict[str, Any]) -> Path:
        payload = dict(manifest)
        payload["outputs"] = sorted(set(self.written) | {MANIFEST_NAME})
        return self.write_json(MANIFEST_NAME, payload)

    def read_csv(self, name: str) -> List[Dict[str, str]]:
        """Read a CSV artifact back as a list of row dictionaries."""
        with open(self.output_dir / name, "r", encoding="utf-8", newline="") as f:
            return list(csv.DictReader(f))

    def load_manifest(self, directory: Optional[Path] = None) -> Optional[Dict[str, Any]]:
        """Load the manifest of ``directory`` (default: this store).

        Returns:
            The manifest, or None when it is missing or unreadable.
        """
        path = Path(directory or self.output_dir) / MANIFEST_NAME
        try:
            with open(path, "r", encoding="utf-8") as f:
                return json.load(f)
        except (FileNotFoundError, json.JSONDecodeError) as e:
            logger.warning(f"Failed to load manifest {path}: {e}")
            return None

    def list_manifests(self) -> List[Dict[str, Any]]:
        """Manifests of this directory and its immediate subdirectories, newest first."""
        if not self.output_dir.exists():
            return []
        candidates = [self.output_dir, *sorted(p for p in self.output_dir.iterdir() if p.is_dir())]
        manifests = []
        for directory in candidates:
            if (directory / MANIFEST_NAME).exists():
                manifest = self.load_manifest(directory)
                if manifest is not None:
                    manifest.setdefault("directory", str(directory))
                    manifests.append(manifest)
        return sorted(manifests, key=lambda m: m.get("finished_at", ""), reverse=True)


def load_control_csv(path: Path, dim: int) -> ControlField:
    """Read a control CSV (cell_id, a11[, a12, a22]) into a ControlField."""
    try:
        with open(path, "r", encoding="utf-8", newline="") as f:
            reader = csv.reader(f)
            next(reader)
            rows = sorted((list(map(float, row)) for row in reader if row), key=lambda r: r[0])
        return control_from_rows(rows, dim)
    except (OSError, ValueError, IndexError, StopIteration) as e:
        raise ConfigurationError(f"cannot read control CSV {path}: {e}") from e
