"""Deterministic CSV/JSON rendering with a metadata header, written atomically."""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile

from . import __version__


def metadata(command: str, config: dict, precision=None) -> dict:
    return {
        "package": "fibham",
        "version": __version__,
        "command": command,
        "config": config,
        "precision_bits": precision,
    }


def render_csv(meta: dict, columns, rows) -> str:
    """CSV text preceded by one '# {json}' comment line holding the metadata."""
    buf = io.StringIO()
    buf.write("# " + json.dumps(meta, sort_keys=True) + "\n")
    w = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


def render_json(meta: dict, data) -> str:
    return json.dumps({"meta": meta, "data": data}, indent=2, sort_keys=True) + "\n"


def read_csv(text: str):
    """Inverse of render_csv: (metadata, list of row dicts)."""
    lines = text.splitlines()
    meta = {}
    if lines and lines[0].startswith("# "):
        meta = json.loads(lines[0][2:])
        lines = lines[1:]
    return meta, list(csv.DictReader(lines))


def write_atomic(path: str, text: str) -> None:
    """Write via a temporary file in the target directory and rename."""
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
