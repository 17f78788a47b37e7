"""CSV writers/readers for attributions and benchmark tables.

Files may start with ``#`` comment lines of ``key=value`` metadata; readers
return them separately.  All writes are atomic (temp file + rename).
"""

from __future__ import annotations

import csv
import io
import os
import tempfile

import numpy as np

GLOBAL_FIELDS = ("name", "phi", "phi_percent")
LOCAL_FIELDS = ("row_id", "feature", "phi")
ORACLE_FIELDS = ("method", "name", "phi", "phi_percent")
ACCURACY_FIELDS = ("scenario", "rho", "method", "feature", "phi_pct", "error", "wall_ms")
GAMMA_FIELDS = ("gamma", "n_subsets", "wall_ms", "error_vs_full", "error_vs_oracle")
SHAP_CORR_FIELDS = ("rho", "feature", "pearson", "rms_estimated", "rms_true")
SCATTER_FIELDS = ("rho", "feature", "row_id", "true", "estimated")


def fmt(x) -> str:
    """Full round-trip precision for floats."""
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, np.integer):
        return str(int(x))
    return str(x)


def atomic_write(path, text: str) -> None:
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=d)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_table(path, fields, rows, meta: dict | None = None) -> None:
    buf = io.StringIO()
    if meta:
        buf.write("# " + ",".join(f"{k}={fmt(v)}" for k, v in meta.items()) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(fields)
    for r in rows:
        values = [r[f] for f in fields] if isinstance(r, dict) else r
        w.writerow([fmt(v) for v in values])
    atomic_write(path, buf.getvalue())


def read_table(path):
    """Return ``(meta, rows)`` with rows as dicts of strings."""
    meta = {}
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    body = []
    for line in lines:
        if line.startswith("#"):
            for part in line[1:].strip().split(","):
                if "=" in part:
                    k, v = part.split("=", 1)
                    meta[k.strip()] = v.strip()
        elif line.strip():
            body.append(line)
    rows = list(csv.DictReader(body))
    return meta, rows


def write_global(path, result, seed=None, method: str | None = None) -> None:
    """Global attribution CSV: name, phi, phi_percent."""
    meta = {"gamma": result.gamma, "n_subsets": result.n_subsets, "seed": seed, "wall_ms": result.wall_ms}
    pct = result.percent if result.percent is not None else np.full(len(result.phi), np.nan)
    names = result.columns or tuple(f"X{j + 1}" for j in range(len(result.phi)))
    if method is None:
        rows = [(n, float(v), float(q)) for n, v, q in zip(names, result.phi, pct)]
        write_table(path, GLOBAL_FIELDS, rows, meta)
    else:
        rows = [(method, n, float(v), float(q)) for n, v, q in zip(names, result.phi, pct)]
        write_table(path, ORACLE_FIELDS, rows, meta)


def write_local(path, result, seed=None, row_ids=None) -> None:
    """Local attribution CSV in long form: row_id, feature, phi."""
    meta = {"gamma": result.gamma, "n_subsets": result.n_subsets, "seed": seed, "wall_ms": result.wall_ms,
            "offset": result.offset}
    phi = np.atleast_2d(result.phi)
    names = result.columns or tuple(f"X{j + 1}" for j in range(phi.shape[1]))
    ids = range(phi.shape[0]) if row_ids is None else row_ids
    rows = [(rid, names[j], float(phi[i, j])) for i, rid in enumerate(ids) for j in range(phi.shape[1])]
    write_table(path, LOCAL_FIELDS, rows, meta)


def read_global(path):
    """Return ``(meta, names, phi, percent)``."""
    meta, rows = read_table(path)
    names = [r["name"] for r in rows]
    return meta, names, np.array([float(r["phi"]) for r in rows]), np.array([float(r["phi_percent"]) for r in rows])


def read_local(path):
    """Return ``(meta, names, phi)`` with ``phi`` as an ``n x p`` array."""
    meta, rows = read_table(path)
    names = list(dict.fromkeys(r["feature"] for r in rows))
    ids = list(dict.fromkeys(r["row_id"] for r in rows))
    phi = np.full((len(ids), len(names)), np.nan)
    ri = {k: i for i, k in enumerate(ids)}
    ci = {k: j for j, k in enumerate(names)}
    for r in rows:
        phi[ri[r["row_id"]], ci[r["feature"]]] = float(r["phi"])
    return meta, names, phi
