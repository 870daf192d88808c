import csv
import hashlib
import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)


def format_cell(value: Any) -> str:
    """
    Render one CSV cell.

    Floats use the shortest round-trip decimal, None becomes an empty cell.
    """
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if math.isnan(v):
            return "nan"
        return repr(v)
    return str(value)


def write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    """
    Write a UTF-8 CSV with a header row and '\\n' line endings.

    Args:
        path: Destination file
        header: Column names
        rows: Row tuples, one value per column
    """
    with open(path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_cell(v) for v in row])
    logger.info(f"Wrote {path}")


def file_sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(65536), b''):
            digest.update(chunk)
    return digest.hexdigest()


@dataclass
class Table:
    header: List[str]
    rows: List[Tuple[Any, ...]] = field(default_factory=list)

    def column(self, name: str) -> List[Any]:
        k = self.header.index(name)
        return [row[k] for row in self.rows]


@dataclass
class RunManifest:
    """Provenance record written next to every run's artifacts."""
    config_hash: str
    subcommand: str
    started_at: str
    finished_at: str = ""
    status: str = "ok"
    tool_version: str = ""
    outputs: List[Dict[str, str]] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


class ResultStore:
    """
    In-memory store for the tables and documents a run produces.

    Data structure:
    {
        table_name: Table(header, rows),
    }
    plus extra documents (SVG, PGM) keyed by file name.
    Nothing touches the disk until write_all.
    """

    def __init__(self):
        self.tables: Dict[str, Table] = {}
        self.documents: Dict[str, bytes] = {}
        logger.debug("ResultStore initialized")

    def create_table(self, name: str, header: Sequence[str]) -> None:
        """
        Create a new empty table.

        Args:
            name: Table name, also the CSV file stem
            header: Column names
        """
        if name not in self.tables:
            self.tables[name] = Table(header=list(header))
            logger.debug(f"Created table '{name}' with columns {list(header)}")

    def table_exists(self, name: str) -> bool:
        """
        Check if a table exists.

        Args:
            name: Table name

        Returns:
            bool: True if the table exists, False otherwise
        """
        return name in self.tables

    def get_table(self, name: str) -> Optional[Table]:
        return self.tables.get(name)

    def add_row(self, name: str, row: Sequence[Any]) -> None:
        """
        Append a row to a table.

        Args:
            name: Table name
            row: One value per column
        """
        table = self.tables[name]
        if len(row) != len(table.header):
            raise ValueError(f"Row for '{name}' has {len(row)} values, expected {len(table.header)}")
        table.rows.append(tuple(row))

    def add_rows(self, name: str, rows: Iterable[Sequence[Any]]) -> None:
        for row in rows:
            self.add_row(name, row)

    def add_document(self, filename: str, content) -> None:
        """
        Store a non-tabular artifact.

        Args:
            filename: File name under the output directory
            content: str (written as UTF-8) or bytes
        """
        if isinstance(content, str):
            content = content.encode('utf-8')
        self.documents[filename] = content
        logger.debug(f"Stored document '{filename}' ({len(content)} bytes)")

    def delete_table(self, name: str) -> bool:
        """
        Delete a table.

        Args:
            name: Table name

        Returns:
            bool: True if the table was deleted, False if it did not exist
        """
        if name in self.tables:
            del self.tables[name]
            logger.debug(f"Deleted table '{name}'")
            return True
        return False

    def write_all(self, out_dir: str) -> List[str]:
        """
        Write every table as <name>.csv and every document under out_dir.

        Returns:
            List[str]: paths written, in sorted name order
        """
        os.makedirs(out_dir, exist_ok=True)
        written = []
        for name in sorted(self.tables):
            table = self.tables[name]
            path = os.path.join(out_dir, f"{name}.csv")
            write_csv(path, table.header, table.rows)
            written.append(path)
        for filename in sorted(self.documents):
            path = os.path.join(out_dir, filename)
            with open(path, 'wb') as f:
                f.write(self.documents[filename])
            logger.info(f"Wrote {path}")
            written.append(path)
        return written


def write_manifest(out_dir: str, manifest: RunManifest, paths: Sequence[str]) -> str:
    """
    Record output hashes and write manifest.json.

    Args:
        out_dir: Output directory
        manifest: Manifest with everything but the outputs filled in
        paths: Files the run produced

    Returns:
        str: path of the manifest
    """
    os.makedirs(out_dir, exist_ok=True)
    manifest.outputs = [
        {'file': os.path.relpath(p, out_dir), 'sha256': file_sha256(p)}
        for p in sorted(paths)
    ]
    path = os.path.join(out_dir, "manifest.json")
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        f.write(manifest.to_json())
    logger.info(f"Wrote manifest {path}")
    return path
