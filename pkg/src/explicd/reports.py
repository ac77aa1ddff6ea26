"""JSON and CSV report writers.

JSON keeps full-precision values so it re-parses to the in-memory results.
CSV is for reading next to published tables: fractions listed in
``percent_keys`` are written as percentages with one decimal, ``*_pct``
columns are already percentages and get one decimal too.
"""

from __future__ import annotations

import csv
import json
from typing import Optional, Sequence


def _fmt(key, value, percent_keys):
    if isinstance(value, float):
        if key in percent_keys:
            return f"{100.0 * value:.1f}"
        if key.endswith("_pct"):
            return f"{value:.1f}"
        return repr(value)
    return value


def write_report(results, format: str, path, config: Optional[dict] = None,
                 percent_keys: Sequence[str] = (), columns: Optional[Sequence[str]] = None) -> None:
    """Write ``results`` (a list of flat dicts for CSV, anything JSON-able for JSON)."""
    if format == "json":
        with open(path, "w", encoding="utf-8") as fh:
            json.dump({"config": config, "results": results}, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return
    if format != "csv":
        raise ValueError(f"unsupported report format {format!r}")
    rows = list(results)
    if columns is None:
        columns = list(rows[0]) if rows else []
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if config:
            for k in sorted(config):
                fh.write(f"# {k}={config[k]}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(c, r.get(c, ""), percent_keys) for c in columns])


def read_json_report(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def format_for(path) -> str:
    return "csv" if str(path).lower().endswith(".csv") else "json"
