"""
Reproducible artifacts: RFC-4180 CSV at 17 significant digits and a JSON
run manifest with content hashes.
"""
import csv
import hashlib
import json
import platform
from pathlib import Path

import mpmath
import numpy as np
import scipy

__all__ = ["format_value", "write_csv", "read_csv", "sha256_file", "write_json", "write_manifest"]


def format_value(x):
    """Round-trip text for doubles (``%.17g``); mpf values keep 17 digits too."""
    if isinstance(x, mpmath.mpf):
        return mpmath.nstr(x, 17)
    if x is None:
        return ""
    if isinstance(x, str):
        return x
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return "%.17g" % float(x)


def write_csv(path, columns):
    """
    Write ``columns`` (an ordered mapping name -> sequence) as CSV.

    Rows are terminated with CRLF and fields quoted only when needed.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = list(columns)
    data = [list(columns[k]) for k in names]
    n = len(data[0]) if data else 0
    if any(len(col) != n for col in data):
        raise ValueError("all CSV columns must have the same length")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(names)
        for i in range(n):
            w.writerow([format_value(col[i]) for col in data])
    return path


def read_csv(path):
    """Read a CSV written by :func:`write_csv` into a dict of string lists."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    names = rows[0]
    return {k: [r[i] for r in rows[1:]] for i, k in enumerate(names)}


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        v = float(x)
        return v if np.isfinite(v) else str(v)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, mpmath.mpf):
        return format_value(x)
    return x


def write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")
    return path


def write_manifest(out_dir, command, config, checks, files, wall_time):
    """
    ``manifest.json`` with the config echo, library versions, wall time,
    per-check outcomes and a sha256 for every output file.
    """
    from . import __version__

    out_dir = Path(out_dir)
    entries = []
    for f in files:
        f = Path(f)
        entries.append({"path": str(f.relative_to(out_dir)) if f.is_relative_to(out_dir) else str(f),
                        "sha256": sha256_file(f)})
    manifest = {
        "command": command,
        "config": config,
        "versions": {"bubbletree": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "mpmath": mpmath.__version__, "python": platform.python_version()},
        "wall_time_s": wall_time,
        "checks": [{"name": c.name, "passed": c.passed, "value": c.value, "target": c.target} for c in checks],
        "all_passed": all(c.passed for c in checks),
        "files": entries,
    }
    return write_json(out_dir / "manifest.json", manifest)
