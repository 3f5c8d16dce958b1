"""CSV emission with a fixed, versioned schema (schema column = 1)."""

from __future__ import annotations

import csv
import io
import sys

from .config import CSV_SCHEMA, ScenarioResult


def result_to_csv(result: ScenarioResult) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["schema"] + result.header)
    for row in result.rows:
        writer.writerow([CSV_SCHEMA, *row])
    return buf.getvalue()


def write_result(result: ScenarioResult, path: str | None) -> None:
    text = result_to_csv(result)
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w", newline="") as fh:
            fh.write(text)
