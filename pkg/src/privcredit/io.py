"""CSV ingestion, flat config files, and JSON report serialization."""

import csv
import json

import numpy as np

from .errors import DataValidationError
from .model import derive_series

CSV_HEADER = [
    "period",
    "book_equity",
    "book_liability",
    "payout_equity",
    "payout_liability",
]


def ingest(path):
    """Read and validate a panel CSV into an :class:`ObservedSeries`.

    The first data row fixes the initial book values; its payout cells may
    be empty. Periods must be consecutive integers and every value strictly
    positive. Diagnostics name the offending row and column.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataValidationError(f"{path}: empty file") from None
        if [h.strip() for h in header] != CSV_HEADER:
            raise DataValidationError(
                f"{path}: malformed header {header!r}, expected {CSV_HEADER}"
            )
        rows = [row for row in reader if row and any(c.strip() for c in row)]
    if len(rows) < 2:
        raise DataValidationError(f"{path}: need at least 2 data rows")

    def cell(row_idx, col_idx, allow_empty=False):
        row = rows[row_idx]
        if len(row) != len(CSV_HEADER):
            raise DataValidationError(
                f"{path}: row {row_idx + 2} has {len(row)} fields, expected "
                f"{len(CSV_HEADER)}"
            )
        raw = row[col_idx].strip()
        if raw == "":
            if allow_empty:
                return None
            raise DataValidationError(
                f"{path}: row {row_idx + 2}, column {CSV_HEADER[col_idx]} is empty"
            )
        try:
            return float(raw)
        except ValueError:
            raise DataValidationError(
                f"{path}: row {row_idx + 2}, column {CSV_HEADER[col_idx]}: "
                f"not a number ({raw!r})"
            ) from None

    first_period = int(cell(0, 0))
    n = len(rows)
    books = np.empty((n, 2))
    payouts = np.empty((n - 1, 2))
    for i in range(n):
        period = cell(i, 0)
        if period != first_period + i:
            raise DataValidationError(
                f"{path}: row {i + 2}: period {period:g} breaks the "
                f"consecutive sequence starting at {first_period}"
            )
        for j, col in ((1, 0), (2, 1)):
            value = cell(i, j)
            if not value > 0:
                raise DataValidationError(
                    f"{path}: row {i + 2}, column {CSV_HEADER[j]}: must be "
                    f"strictly positive (got {value:g})"
                )
            books[i, col] = value
        for j, col in ((3, 0), (4, 1)):
            value = cell(i, j, allow_empty=(i == 0))
            if i == 0:
                continue
            if value is None or not value > 0:
                shown = "empty" if value is None else f"{value:g}"
                raise DataValidationError(
                    f"{path}: row {i + 2}, column {CSV_HEADER[j]}: must be "
                    f"strictly positive (got {shown})"
                )
            payouts[i - 1, col] = value
    return derive_series(books, payouts)


def write_panel_csv(path, books, payouts, first_period=0):
    """Write an ingestible panel CSV (books at 0..T, payouts at 1..T)."""
    books = np.asarray(books, float)
    payouts = np.asarray(payouts, float)
    def fmt(x):
        return repr(float(x))

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        writer.writerow([first_period, fmt(books[0, 0]), fmt(books[0, 1]), "", ""])
        for i in range(1, books.shape[0]):
            writer.writerow(
                [
                    first_period + i,
                    fmt(books[i, 0]),
                    fmt(books[i, 1]),
                    fmt(payouts[i - 1, 0]),
                    fmt(payouts[i - 1, 1]),
                ]
            )


def parse_config(path, allowed_keys):
    """Parse a flat ``key = value`` config file.

    Blank lines and ``#`` comments are ignored; unknown keys are rejected.
    Values come back as strings; use :func:`coerce` for typing.
    """
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise DataValidationError(
                    f"{path}: line {lineno}: expected 'key = value'"
                )
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in allowed_keys:
                raise DataValidationError(f"{path}: line {lineno}: unknown key {key!r}")
            if key in out:
                raise DataValidationError(f"{path}: line {lineno}: duplicate key {key!r}")
            out[key] = value
    return out


def coerce(config, key, kind, default=None, required=False):
    """Typed lookup into a parsed config mapping."""
    if key not in config:
        if required:
            raise DataValidationError(f"config key {key!r} is required")
        return default
    raw = config[key]
    try:
        if kind is bool:
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        return kind(raw)
    except ValueError:
        raise DataValidationError(
            f"config key {key!r}: cannot parse {raw!r} as {kind.__name__}"
        ) from None


def _to_jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, dict):
        return {k: _to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_jsonable(v) for v in obj]
    return obj


def format_report(report):
    """Serialize a report losslessly and deterministically.

    Floats are rendered with ``repr`` (shortest round-tripping form), keys
    sorted, so identical runs produce byte-identical documents.
    """
    return json.dumps(_to_jsonable(report), sort_keys=True, indent=2) + "\n"


def write_report(report, path=None, stream=None):
    text = format_report(report)
    if path:
        with open(path, "w") as fh:
            fh.write(text)
    elif stream is not None:
        stream.write(text)
    return text
