import hashlib
import json
import logging
import os
import tempfile
from fractions import Fraction
from pathlib import Path
from typing import Any, Union

import numpy as np

from maglab.errors import ReportIOError

logger = logging.getLogger("maglab")


def atomic_write_text(path, text: str) -> Path:
    """Write ``text`` next to ``path`` and rename it into place."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
            f.write(text)
        os.replace(tmp, path)
    except OSError as e:
        raise ReportIOError(f"could not write {path}: {e}") from e
    logger.debug("Wrote %s", path)
    return path


def parse_fraction(value: Union[str, int, float, Fraction]) -> Fraction:
    """Accept "p/q", decimal strings, ints, floats and Fractions."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, float):
        return Fraction(value).limit_denominator(1 << 40) if value != int(value) else Fraction(int(value))
    return Fraction(value)


def format_fraction(value: Fraction) -> str:
    return f"{value.numerator}/{value.denominator}"


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _json_default(obj: Any):
    if isinstance(obj, Fraction):
        return format_fraction(obj)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"{type(obj).__name__} is not JSON serialisable")


def dump_json(data: Any) -> str:
    return json.dumps(data, indent=2, sort_keys=True, default=_json_default)
