"""Metric persistence: versioned CSV trajectories and run.meta sidecars.

The CSV layout is frozen: a version comment line, a fixed header row, one
row per probe step.  Floats are written with 17 significant digits so
read(write(x)) is bit-exact; missing values (velocity before dt steps,
train_loss at step 0) are empty cells.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import DataError, VersionError

__all__ = [
    "MetricRecord",
    "CSV_VERSION_LINE",
    "METRIC_COLUMNS",
    "write_metrics_csv",
    "read_metrics_csv",
    "write_run_meta",
    "read_run_meta",
    "ARTIFACT_VERSION",
]

ARTIFACT_VERSION = "ntklab-0.1.0"
CSV_VERSION_LINE = "# ntklab-metrics-v1"

_INT_COLUMNS = ("global_step", "task_index", "iteration")
_OPTIONAL_COLUMNS = ("velocity", "train_loss", "task1_test_accuracy")


@dataclass(frozen=True)
class MetricRecord:
    """One probe-step measurement row."""

    global_step: int  # probe-step counter, 0 at initialization
    task_index: int  # task whose training produced this state
    iteration: int  # SGD iterations completed before this probe
    lambda_max: float
    kernel_distance_from_init: float
    kernel_distance_from_prev: float
    velocity: float | None  # distance per probe step over the dt window
    alignment: float
    train_loss: float | None  # mean batch loss since the previous probe
    task1_test_accuracy: float | None

    def __post_init__(self):
        if self.global_step < 0 or self.iteration < 0 or self.task_index < 0:
            raise DataError("step counters must be nonnegative")
        if self.lambda_max < 0:
            raise DataError(f"lambda_max must be >= 0, got {self.lambda_max}")
        for name in ("kernel_distance_from_init", "kernel_distance_from_prev"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise DataError(f"{name} must lie in [0, 1], got {v}")
        if self.velocity is not None and self.velocity < 0:
            raise DataError(f"velocity must be >= 0, got {self.velocity}")


METRIC_COLUMNS = tuple(f.name for f in fields(MetricRecord))


def _format_cell(name: str, value) -> str:
    if value is None:
        return ""
    if name in _INT_COLUMNS:
        return str(int(value))
    return format(float(value), ".17g")


def _parse_cell(name: str, text: str):
    if text == "":
        if name in _OPTIONAL_COLUMNS:
            return None
        raise DataError(f"column {name!r} must not be empty")
    if name in _INT_COLUMNS:
        return int(text)
    return float(text)


def write_metrics_csv(records, path: str | Path) -> None:
    """Write records under the versioned header; empty list → header only."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        fh.write(CSV_VERSION_LINE + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRIC_COLUMNS)
        for rec in records:
            writer.writerow(
                [_format_cell(c, getattr(rec, c)) for c in METRIC_COLUMNS]
            )


def read_metrics_csv(path: str | Path) -> list[MetricRecord]:
    """Inverse of write_metrics_csv; alien headers raise VersionError."""
    path = Path(path)
    with path.open("r", newline="") as fh:
        version = fh.readline().rstrip("\n")
        if version != CSV_VERSION_LINE:
            raise VersionError(
                f"{path}: expected version line {CSV_VERSION_LINE!r}, "
                f"got {version!r}"
            )
        reader = csv.reader(fh)
        try:
            header = tuple(next(reader))
        except StopIteration:
            raise VersionError(f"{path}: missing header row") from None
        if header != METRIC_COLUMNS:
            raise VersionError(
                f"{path}: header columns {header} do not match {METRIC_COLUMNS}"
            )
        records = []
        for row in reader:
            if not row:
                continue
            if len(row) != len(METRIC_COLUMNS):
                raise DataError(
                    f"{path}: row {len(records) + 1} has {len(row)} cells, "
                    f"expected {len(METRIC_COLUMNS)}"
                )
            values = {
                name: _parse_cell(name, cell)
                for name, cell in zip(METRIC_COLUMNS, row)
            }
            records.append(MetricRecord(**values))
    return records


def write_run_meta(mapping: dict, path: str | Path) -> None:
    """Flat `key = value` sidecar (config hash, probe hash, status...)."""
    lines = []
    for key, value in mapping.items():
        key = str(key)
        if not key or any(ch in key for ch in " =\n#"):
            raise DataError(f"bad meta key {key!r}")
        text = "" if value is None else str(value)
        if "\n" in text:
            raise DataError(f"meta value for {key!r} must be single-line")
        lines.append(f"{key} = {text}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_run_meta(path: str | Path) -> dict[str, str]:
    meta: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise DataError(f"{path}:{lineno}: expected `key = value`")
        key, _, value = line.partition("=")
        meta[key.strip()] = value.strip()
    return meta
