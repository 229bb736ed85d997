"""Reading and writing attribution tables.

CSV layout: ``instance_id,baseline,phi_<feature>...``, one row per instance.
The structured variant is JSON with a ``metadata`` block. Both writers
stream rows so large batches never need to be held as text in memory.
"""
from __future__ import annotations

import csv
import json
from typing import Iterable, Optional, Sequence, TextIO

import numpy as np

from .bench import DataError
from .protocol import format_float


def write_csv(fh: TextIO, feature_names: Sequence[str], rows: Iterable[tuple[int, float, np.ndarray]]) -> int:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["instance_id", "baseline"] + [f"phi_{n}" for n in feature_names])
    count = 0
    for instance_id, baseline, phi in rows:
        w.writerow([instance_id, format_float(baseline)] + [format_float(v) for v in phi])
        count += 1
    return count


def write_structured(
    fh: TextIO,
    feature_names: Sequence[str],
    rows: Iterable[tuple[int, float, np.ndarray]],
    metadata: dict,
) -> int:
    fh.write("{\n")
    fh.write(f' "metadata": {json.dumps(metadata, sort_keys=True)},\n')
    fh.write(f' "feature_names": {json.dumps(list(feature_names))},\n')
    fh.write(' "attributions": [')
    count = 0
    for instance_id, baseline, phi in rows:
        rec = {"instance_id": int(instance_id), "baseline": float(baseline), "phi": [float(v) for v in phi]}
        fh.write(("," if count else "") + "\n  " + json.dumps(rec))
        count += 1
    fh.write("\n ]\n}\n")
    return count


def write_attributions(
    fh: TextIO,
    fmt: str,
    feature_names: Sequence[str],
    rows: Iterable[tuple[int, float, np.ndarray]],
    metadata: Optional[dict] = None,
) -> int:
    if fmt == "csv":
        return write_csv(fh, feature_names, rows)
    if fmt == "structured":
        return write_structured(fh, feature_names, rows, metadata or {})
    raise ValueError(f"unknown attribution format {fmt!r}")


def read_attributions(path) -> tuple[list[str], np.ndarray, np.ndarray]:
    """Return ``(feature_names, baselines, phi)`` from either format."""
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc.strerror}") from None
    if text.lstrip().startswith("{"):
        try:
            doc = json.loads(text)
            names = list(doc["feature_names"])
            recs = doc["attributions"]
            base = np.array([r["baseline"] for r in recs], dtype=np.float64)
            phi = np.array([r["phi"] for r in recs], dtype=np.float64).reshape(len(recs), len(names))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{path}: malformed attribution document ({exc})") from None
        return names, base, phi
    reader = csv.reader(text.splitlines())
    header = next(reader, None)
    if not header or header[:2] != ["instance_id", "baseline"]:
        raise DataError(f"{path}: not an attribution table", line=1)
    names = [h[4:] if h.startswith("phi_") else h for h in header[2:]]
    base, phi = [], []
    for lineno, rec in enumerate(reader, start=2):
        if not rec:
            continue
        if len(rec) != len(header):
            raise DataError(f"expected {len(header)} fields, got {len(rec)}", line=lineno)
        try:
            vals = [float(c) for c in rec[1:]]
        except ValueError:
            raise DataError("non-numeric attribution value", line=lineno) from None
        base.append(vals[0])
        phi.append(vals[1:])
    return names, np.array(base), np.array(phi, dtype=np.float64).reshape(len(phi), len(names))
