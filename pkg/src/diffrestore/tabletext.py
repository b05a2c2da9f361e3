"""Shared plain-text table format for traces and metric tables.

Layout: zero or more '# key = value' header lines, one space-separated
column-name line, then one row per line. Floats print as %.17g so a table
written twice from the same run is byte-identical.
"""

from __future__ import annotations

from typing import Any, Iterable, Mapping


def format_value(v: Any) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        if v != v:
            return "nan"
        if v == float("inf"):
            return "inf"
        if v == float("-inf"):
            return "-inf"
        return "%.17g" % v
    return str(v)


def format_table(
    columns: list[str],
    rows: Iterable[Mapping[str, Any]],
    header: Mapping[str, Any] | None = None,
) -> str:
    lines = []
    if header:
        for key in header:
            lines.append(f"# {key} = {format_value(header[key])}")
    lines.append(" ".join(columns))
    for row in rows:
        lines.append(" ".join(format_value(row[c]) for c in columns))
    return "\n".join(lines) + "\n"
