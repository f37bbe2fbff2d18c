"""Deterministic JSON serialization (floats with 17 significant digits)."""
from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

REPORT_KEYS = ("config", "records", "aggregates", "slopes", "version")


def _float(x: float) -> str:
    if not math.isfinite(x):
        return "null"
    s = format(x, ".17g")
    if not any(c in s for c in ".en"):
        s += ".0"
    return s


def _encode(obj, indent: int, level: int, out: list):
    pad = " " * (indent * (level + 1))
    close = " " * (indent * level)
    if isinstance(obj, (bool, np.bool_)):
        out.append("true" if obj else "false")
    elif obj is None:
        out.append("null")
    elif isinstance(obj, (int, np.integer)):
        out.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        out.append(_float(float(obj)))
    elif isinstance(obj, str):
        out.append(json.dumps(obj))
    elif isinstance(obj, dict):
        if not obj:
            out.append("{}")
            return
        out.append("{\n")
        for k, (key, val) in enumerate(obj.items()):
            out.append(pad + json.dumps(str(key)) + ": ")
            _encode(val, indent, level + 1, out)
            out.append(",\n" if k < len(obj) - 1 else "\n")
        out.append(close + "}")
    elif isinstance(obj, (list, tuple, np.ndarray)):
        seq = obj.tolist() if isinstance(obj, np.ndarray) else obj
        if not seq:
            out.append("[]")
            return
        if all(isinstance(v, (int, float, np.integer, np.floating)) and not isinstance(v, bool) for v in seq):
            out.append("[")
            for k, v in enumerate(seq):
                _encode(v, indent, level + 1, out)
                if k < len(seq) - 1:
                    out.append(", ")
            out.append("]")
            return
        out.append("[\n")
        for k, v in enumerate(seq):
            out.append(pad)
            _encode(v, indent, level + 1, out)
            out.append(",\n" if k < len(seq) - 1 else "\n")
        out.append(close + "]")
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj, indent: int = 2) -> str:
    out: list = []
    _encode(obj, indent, 0, out)
    out.append("\n")
    return "".join(out)


def write_report(obj, path) -> None:
    Path(path).write_text(dumps(obj), encoding="utf-8")


def make_report(config: dict, records: list, aggregates=None, slopes=None) -> dict:
    from . import __version__

    return {
        "config": config,
        "records": records,
        "aggregates": {} if aggregates is None else aggregates,
        "slopes": [] if slopes is None else slopes,
        "version": __version__,
    }
