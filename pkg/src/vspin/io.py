"""CSV/JSON emission and typed trace ingestion.

All files are UTF-8, comma separated, with one header row.  Writes go to a
temporary file in the target directory followed by an atomic rename.
"""

import csv
import io
import json
import math
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import TraceFormatError

# abscissa/ordinate header -> (canonical name, scale to canonical unit)
UNIT_TABLE = {
    "recovery": {"tau_s": 1.0, "tau_ms": 1e-3, "tau_us": 1e-6},
    "trace": {"time_s": 1.0, "time_ms": 1e-3, "time_us": 1e-6},
    "spectrum": {"detuning_MHz": 1.0, "detuning_GHz": 1e3},
    "depletion": {"b_mT": 1.0, "b_T": 1e3},
}
VALUE_COLUMN = {
    "recovery": "recovered_fraction",
    "trace": "fluorescence",
    "spectrum": "signal",
    "depletion": "depletion",
}
CANONICAL_X = {"recovery": "tau_s", "trace": "time_s", "spectrum": "detuning_MHz", "depletion": "b_mT"}


def format_number(v):
    """Shortest text that round-trips the float; integers stay integral."""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        return repr(0.0 if v == 0 else v)
    return str(v)


def atomic_write_text(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def write_csv(path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([format_number(v) for v in row])
    return atomic_write_text(path, buf.getvalue())


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path, obj):
    return atomic_write_text(path, json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


@dataclass(frozen=True, eq=False)
class Trace:
    """Ingested series in canonical units."""

    kind: str
    x: np.ndarray
    y: np.ndarray
    sigma: np.ndarray = None
    x_name: str = ""
    y_name: str = ""


def _read_rows(path):
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            return list(csv.reader(fh))
    except OSError as exc:
        raise TraceFormatError(f"{path}: cannot read ({exc.strerror})") from exc
    except UnicodeDecodeError as exc:
        raise TraceFormatError(f"{path}: not UTF-8 text") from exc


def ingest_trace(path, kind):
    """Read a two- or three-column CSV series.

    Parameters
    ----------
    path : str or Path
    kind : {"recovery", "trace", "spectrum", "depletion"}
        Selects the accepted headers and unit conversions, e.g. ``tau_ms`` is
        converted to seconds.  An optional third column ``sigma`` carries
        per-point standard deviations in ordinate units.

    Returns
    -------
    RecoveryCurve for ``"recovery"``, :class:`Trace` otherwise.

    Raises
    ------
    TraceFormatError
        Unknown header, malformed or non-finite row, non-increasing or
        duplicate abscissa; messages carry 1-based line numbers.
    """
    if kind not in UNIT_TABLE:
        raise TraceFormatError(f"unknown trace kind {kind!r}; expected one of {sorted(UNIT_TABLE)}")
    rows = _read_rows(path)
    if not rows:
        raise TraceFormatError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    units = UNIT_TABLE[kind]
    if len(header) not in (2, 3) or header[0] not in units or header[1] != VALUE_COLUMN[kind] \
            or (len(header) == 3 and header[2] != "sigma"):
        expected = f"{'|'.join(units)},{VALUE_COLUMN[kind]}[,sigma]"
        raise TraceFormatError(f"{path}:1: header {','.join(header)!r} does not match {expected}")
    scale = units[header[0]]
    ncol = len(header)
    data, lines = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != ncol:
            raise TraceFormatError(f"{path}:{lineno}: expected {ncol} fields, got {len(row)}")
        try:
            vals = [float(c) for c in row]
        except ValueError as exc:
            raise TraceFormatError(f"{path}:{lineno}: malformed number ({exc})") from None
        if not all(math.isfinite(v) for v in vals):
            raise TraceFormatError(f"{path}:{lineno}: NaN or infinite value")
        if ncol == 3 and vals[2] <= 0:
            raise TraceFormatError(f"{path}:{lineno}: sigma must be positive")
        data.append(vals)
        lines.append(lineno)
    if not data:
        raise TraceFormatError(f"{path}: no data rows")
    arr = np.array(data)
    x = arr[:, 0] * scale
    for k in range(1, x.size):
        if x[k] == x[k - 1]:
            raise TraceFormatError(f"{path}:{lines[k - 1]},{lines[k]}: duplicate abscissa {arr[k, 0]!r}")
        if x[k] < x[k - 1]:
            raise TraceFormatError(f"{path}:{lines[k]}: abscissa decreases (after line {lines[k - 1]})")
    sigma = arr[:, 2] if ncol == 3 else None
    if kind == "recovery":
        from .dynamics.sequences import RecoveryCurve
        return RecoveryCurve(x, arr[:, 1], sigma)
    return Trace(kind, x, arr[:, 1], sigma, CANONICAL_X[kind], VALUE_COLUMN[kind])


def read_features(path):
    """Map features from a ``b_mT,detuning_MHz,family`` CSV."""
    from .fitting.hyperfine import HyperfineFeature
    rows = _read_rows(path)
    if not rows or [h.strip() for h in rows[0]] != ["b_mT", "detuning_MHz", "family"]:
        raise TraceFormatError(f"{path}:1: header must be b_mT,detuning_MHz,family")
    out = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 3:
            raise TraceFormatError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
        try:
            b, d = float(row[0]), float(row[1])
            out.append(HyperfineFeature(b, d, row[2].strip()))
        except ValueError as exc:
            raise TraceFormatError(f"{path}:{lineno}: {exc}") from None
    return out


def recovery_rows(curve):
    return zip(curve.tau, curve.recovered_fraction)
