"""JSON serialization with exact float round-trips.

Floats are written with 17 significant decimal digits, which is enough for
any IEEE-754 double to parse back to the identical bit pattern, so files
written here are stable across save/load cycles and across runs.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

from .errors import FormatError


def format_float(x: float) -> str:
    if math.isnan(x) or math.isinf(x):
        raise FormatError(f"non-finite float {x!r} cannot be serialized")
    if x == 0.0:
        return "-0.0" if math.copysign(1.0, x) < 0 else "0.0"
    s = format(x, ".17g")
    # keep the token unambiguously a float so json parses it back as one
    if "." not in s and "e" not in s and "E" not in s:
        s += ".0"
    return s


def dumps_exact(obj, indent: int = 0, _level: int = 0) -> str:
    pad = " " * (indent * (_level + 1)) if indent else ""
    end_pad = " " * (indent * _level) if indent else ""
    sep = ",\n" + pad if indent else ", "
    nl = "\n" if indent else ""
    if isinstance(obj, dict):
        items = sep.join(
            f"{json.dumps(str(k))}: {dumps_exact(v, indent, _level + 1)}" for k, v in obj.items()
        )
        return "{}" if not obj else "{" + nl + pad + items + nl + end_pad + "}"
    if isinstance(obj, (list, tuple)):
        items = sep.join(dumps_exact(v, indent, _level + 1) for v in obj)
        return "[]" if not obj else "[" + nl + pad + items + nl + end_pad + "]"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, float):
        return format_float(obj)
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    if obj is None:
        return "null"
    raise FormatError(f"cannot serialize value of type {type(obj).__name__}")


def dump_exact(obj, path) -> None:
    Path(path).write_text(dumps_exact(obj, indent=2) + "\n", encoding="utf-8")


def load_json(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path} is not valid JSON: {exc}") from exc
