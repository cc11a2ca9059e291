"""Schema-versioned JSON reports.

Reports are written with sorted keys and Python's shortest float repr, so two
runs with the same config produce byte-identical bodies; only ``timestamp`` differs.
"""
from __future__ import annotations

import datetime as _dt
import json
import math
import os

import numpy as np

from . import __version__

REPORT_SCHEMA = "formlab.report/1"


class ReportError(OSError):
    pass


def to_jsonable(x):
    """Recursively convert numpy scalars/arrays, Forms and dataclass reports to plain JSON types."""
    if hasattr(x, "to_dict") and callable(x.to_dict):
        return to_jsonable(x.to_dict())
    if isinstance(x, dict):
        return {str(k): to_jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [to_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        if np.iscomplexobj(x):
            return to_jsonable(np.stack([x.real, x.imag], axis=-1))
        return to_jsonable(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer, int)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        return float(x)
    if isinstance(x, (complex, np.complexfloating)):
        return [float(x.real), float(x.imag)]
    if x is None or isinstance(x, str):
        return x
    raise TypeError(f"cannot serialize {type(x).__name__}")


def dumps(doc):
    # NaN/Infinity are kept as the usual JSON extensions; Python parses them back
    return json.dumps(to_jsonable(doc), sort_keys=True, indent=2, allow_nan=True) + "\n"


def build_report(kind, results, config=None, timestamp=None):
    return {
        "schema": REPORT_SCHEMA,
        "kind": kind,
        "version": __version__,
        "config": to_jsonable(config or {}),
        "results": to_jsonable(results),
        "timestamp": timestamp if timestamp is not None else _dt.datetime.now(_dt.timezone.utc).isoformat(),
    }


def emit_report(results, path=None, kind="results", config=None, timestamp=None):
    """Write a report and return its text. ``path=None`` or ``"-"`` only returns it."""
    doc = build_report(kind, results, config, timestamp)
    text = dumps(doc)
    if path not in (None, "-"):
        d = os.path.dirname(os.path.abspath(path))
        try:
            os.makedirs(d, exist_ok=True)
            with open(path, "w") as fh:
                fh.write(text)
        except OSError as e:
            raise ReportError(f"cannot write report to {path}: {e}") from e
    return text


def parse_report(text):
    doc = json.loads(text)
    if doc.get("schema") != REPORT_SCHEMA:
        raise ValueError(f"unknown report schema {doc.get('schema')!r}")
    return doc


def load_report(path):
    with open(path) as fh:
        return parse_report(fh.read())


def body(doc):
    """Report without the timestamp, used for determinism checks."""
    return {k: v for k, v in doc.items() if k != "timestamp"}


def finite_or_none(x):
    return None if x is None or not math.isfinite(x) else float(x)
