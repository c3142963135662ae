"""Deterministic CSV/JSON emission of result rows."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from pathlib import Path


def fmt_value(v):
    """Floats at 6 significant digits; everything else via str."""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return f"{v:.6g}"
    if hasattr(v, "item"):
        return fmt_value(v.item())
    return str(v)


def _columns(rows, columns):
    if columns is not None:
        return list(columns)
    cols = []
    for r in rows:
        for k in r:
            if k not in cols:
                cols.append(k)
    return cols


def emit_report(rows, path, fmt: str = "csv", columns=None) -> Path:
    """Write homogeneous rows with a stable column order.

    With no rows the CSV is header-only (``columns`` names the header) and
    the JSON is an empty list.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cols = _columns(rows, columns)
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([fmt_value(r.get(c, "")) for c in cols])
        path.write_text(buf.getvalue())
    elif fmt == "json":
        out = [{c: _json_value(r.get(c)) for c in cols} for r in rows]
        path.write_text(json.dumps(out, indent=1) + "\n")
    else:
        raise ValueError("format must be 'csv' or 'json'")
    return path


def _json_value(v):
    if isinstance(v, float) or hasattr(v, "item"):
        s = fmt_value(v)
        try:
            f = float(s)
        except ValueError:
            return s
        return s if not math.isfinite(f) else f
    return v


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def content_hash(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()


def long_rows(report: dict, context: dict) -> list[dict]:
    """One row per metric: context columns, then ``metric`` and ``value``."""
    return [{**context, "metric": k, "value": v} for k, v in report.items()]


def mean_std_rows(rows: list[dict], key_cols) -> list[dict]:
    """Mean and sample std of ``value`` grouped by ``key_cols``, in first-seen order."""
    groups: dict[tuple, list[float]] = {}
    for r in rows:
        groups.setdefault(tuple(r[c] for c in key_cols), []).append(float(r["value"]))
    out = []
    for key, vals in groups.items():
        n = len(vals)
        mean = sum(vals) / n
        std = math.sqrt(sum((v - mean) ** 2 for v in vals) / (n - 1)) if n > 1 else 0.0
        out.append({**dict(zip(key_cols, key)), "n": n, "mean": mean, "std": std})
    return out
