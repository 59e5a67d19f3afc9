"""CSV time-series ingestion, noise injection, and full-precision emission."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidInputError, ParseError


@dataclass(frozen=True)
class SeriesRecord:
    """One time-series row: a day index and an observed value."""

    index: int
    value: float


def format_value(v) -> str:
    """Full-precision decimal rendering: 17 significant digits for floats."""
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def ingest_csv(
    path: str | Path,
    index_column: str = "day",
    value_column: str = "cases",
    require_counts: bool = False,
) -> list[SeriesRecord]:
    """Parse an ordered time series from a headed CSV file.

    Indices must be strictly increasing integers; malformed cells are rejected
    with their line number.  With ``require_counts`` the values must be
    nonnegative integers (count data).
    """
    path = Path(path)
    if not path.exists():
        raise ParseError(f"{path}: file not found")
    records: list[SeriesRecord] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file (a header row is required)") from None
        header = [h.strip() for h in header]
        try:
            idx_pos = header.index(index_column)
            val_pos = header.index(value_column)
        except ValueError:
            raise ParseError(
                f"{path}: header {header} is missing column "
                f"{index_column!r} or {value_column!r}"
            ) from None
        prev_index: int | None = None
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                raise ParseError(f"{path}:{line_no}: blank row")
            if len(row) <= max(idx_pos, val_pos):
                raise ParseError(f"{path}:{line_no}: expected {len(header)} cells, got {len(row)}")
            try:
                index = int(row[idx_pos])
                value = float(row[val_pos])
            except ValueError:
                raise ParseError(f"{path}:{line_no}: non-numeric cell in {row!r}") from None
            if not math.isfinite(value):
                raise ParseError(f"{path}:{line_no}: non-finite value {value}")
            if prev_index is not None and index <= prev_index:
                raise ParseError(
                    f"{path}:{line_no}: index {index} does not increase past {prev_index}"
                )
            if require_counts and (value < 0 or value != math.floor(value)):
                raise ParseError(f"{path}:{line_no}: count data must be nonnegative integers")
            records.append(SeriesRecord(index=index, value=value))
            prev_index = index
    if not records:
        raise ParseError(f"{path}: no data rows")
    return records


def add_poisson_noise(
    series: Sequence[SeriesRecord], rate: float, seed: int
) -> list[SeriesRecord]:
    """Add an independent Poisson(rate) draw to every value; deterministic under seed."""
    if rate <= 0:
        raise InvalidInputError(f"noise rate must be > 0, got {rate}")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed))
    noise = rng.poisson(rate, len(series))
    return [
        SeriesRecord(index=r.index, value=r.value + float(n))
        for r, n in zip(series, noise)
    ]


def emit_csv(
    rows: Iterable[Sequence],
    header: Sequence[str],
    path: str | Path | None = None,
) -> str:
    """Write rows as comma-separated UTF-8 text with LF line endings.

    Returns the rendered text; writes it to ``path`` when given.  Floats are
    rendered at full precision so re-runs are byte-comparable.
    """
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(list(header))
    for row in rows:
        writer.writerow([format_value(v) for v in row])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text, encoding="utf-8", newline="")
    return text


def series_to_rows(series: Sequence[SeriesRecord]) -> list[tuple[int, float]]:
    return [(r.index, r.value) for r in series]
