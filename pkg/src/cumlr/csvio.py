"""Fixed-schema CSV artifacts with JSON provenance sidecars.

Files are written to a temporary sibling and renamed into place, so an
interrupted run never leaves a half-written CSV behind. Floats use
``repr`` (shortest round-trip form), which keeps reruns byte-identical.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from pathlib import Path

from cumlr import __version__
from cumlr._backend import BACKEND

SCHEMAS = {
    "sweep": ("lr", "mean_eval_loss", "std_eval_loss", "repeats", "diverged_count"),
    "curve": ("examples_seen", "lr", "train_loss"),
    "scaling": ("total_data", "epochs", "train_size", "best_lr", "kappa"),
    "predict": ("schedule_kind", "epochs", "predicted_eta0", "swept_eta0", "ratio"),
}


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    return str(v)


def atomic_write(path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def sidecar_path(path) -> Path:
    return Path(str(path) + ".meta.json")


def provenance(config: dict | None, **extra) -> dict:
    meta = {"toolkit_version": __version__, "kernel_backend": BACKEND, "config": config}
    meta.update(extra)
    return meta


def render(schema: str, rows) -> str:
    columns = SCHEMAS[schema]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        if len(row) != len(columns):
            raise ValueError(f"{schema} rows need {len(columns)} cells, got {len(row)}")
        w.writerow([_cell(v) for v in row])
    return buf.getvalue()


def write_csv(path, schema: str, rows, meta: dict) -> Path:
    """Write ``rows`` under ``schema`` plus a ``.meta.json`` sidecar."""
    path = Path(path)
    atomic_write(path, render(schema, rows))
    side = dict(meta, schema=schema, columns=list(SCHEMAS[schema]))
    atomic_write(sidecar_path(path), json.dumps(side, indent=2, sort_keys=True) + "\n")
    return path


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        return [], []
    return rows[0], rows[1:]


def append_csv(path, schema: str, rows, meta: dict) -> Path:
    """Append rows, never overwriting earlier ones; the sidecar keeps one entry per append."""
    path = Path(path)
    rows = list(rows)
    old_rows: list[list[str]] = []
    entries = []
    if path.exists():
        header, old_rows = read_csv(path)
        if tuple(header) != SCHEMAS[schema]:
            raise ValueError(f"{path} has columns {header}, expected {list(SCHEMAS[schema])}")
        side = sidecar_path(path)
        if side.exists():
            entries = json.loads(side.read_text()).get("entries", [])
    text = render(schema, [])
    body = render(schema, rows).split("\n", 1)[1]
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(old_rows)
    atomic_write(path, text + buf.getvalue() + body)
    entries.append(dict(meta, rows=len(rows)))
    side = {"schema": schema, "columns": list(SCHEMAS[schema]), "entries": entries}
    atomic_write(sidecar_path(path), json.dumps(side, indent=2, sort_keys=True) + "\n")
    return path
