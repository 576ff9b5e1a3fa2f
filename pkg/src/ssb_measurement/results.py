"""
Result bundles and their on-disk form: a JSON summary plus a CSV table
"""
import csv
import io
import json
import logging
from pathlib import Path
from typing import Any, Optional, Union

import aiofiles
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .exceptions import ResultWriteError

logger = logging.getLogger(__name__)

ARTIFACT_VERSION = "1"

Cell = Union[int, float, str, None]


class ResultBundle(BaseModel):
    """
    Everything one experiment run produced.

    Intent:
    A single value that can be written, re-read and compared. `parameters`
    echoes the resolved experiment config (so it can be fed back to
    reproduce the run), `statistics` holds the reduced numbers and
    `records` the per-trial or per-setting rows under `columns`.

    Rows of stochastic experiments carry their trial index and seed, which
    is all that is needed to re-run a single trial in isolation.
    """

    model_config = ConfigDict(extra="forbid")

    kind: str
    version: str = ARTIFACT_VERSION
    seed: Optional[int] = None
    parameters: dict[str, Any] = Field(default_factory=dict)
    statistics: dict[str, Any] = Field(default_factory=dict)
    columns: list[str]
    records: list[list[Cell]] = Field(default_factory=list)
    warnings: list[str] = Field(default_factory=list)

    @model_validator(mode="after")
    def check_rows(self) -> "ResultBundle":
        width = len(self.columns)
        for index, row in enumerate(self.records):
            if len(row) != width:
                raise ValueError(f"Row {index} has {len(row)} cells, expected {width}")
        return self

    def column(self, name: str) -> list[Cell]:
        position = self.columns.index(name)
        return [row[position] for row in self.records]

    def to_json(self) -> str:
        """Summary text with sorted keys; floats use the shortest round-trip form."""
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, indent=2) + "\n"

    def to_csv(self) -> str:
        """Flat table with a header row; missing values are empty cells."""
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(self.columns)
        for row in self.records:
            writer.writerow([_format_cell(cell) for cell in row])
        return buffer.getvalue()


def _format_cell(cell: Cell) -> str:
    if cell is None:
        return ""
    if isinstance(cell, float):
        return repr(cell)
    return str(cell)


def load_bundle(summary_path: Path) -> ResultBundle:
    """Re-read a summary written by emit_results."""
    return ResultBundle.model_validate_json(summary_path.read_text(encoding="utf-8"))


async def _write_text(path: Path, text: str) -> None:
    try:
        async with aiofiles.open(path, "w", encoding="utf-8", newline="") as f:
            await f.write(text)
    except OSError as e:
        raise ResultWriteError(f"Could not write results ({e.strerror or e})", path) from e


async def emit_results(
    bundle: ResultBundle, directory: Path, stem: Optional[str] = None
) -> tuple[Path, Path]:
    """
    Write ``<stem>.json`` and ``<stem>.csv`` into ``directory``.

    Intent:
    Both files are pure functions of the bundle, so identical runs give
    byte-identical files. Nothing volatile (timings, host names) is ever
    written.

    Args:
        bundle: Result of run_experiment
        directory: Output directory, created when missing
        stem: File name stem (default: the experiment kind)

    Returns:
        Paths of the summary and the table

    Raises:
        ResultWriteError: If the directory or a file cannot be written
    """
    stem = stem or bundle.kind
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        message = f"Could not create output directory ({e.strerror or e})"
        raise ResultWriteError(message, directory) from e

    summary_path = directory / f"{stem}.json"
    table_path = directory / f"{stem}.csv"
    await _write_text(summary_path, bundle.to_json())
    await _write_text(table_path, bundle.to_csv())
    logger.info(f"[EMIT] {summary_path} and {table_path} ({len(bundle.records)} rows)")
    return summary_path, table_path
