import datetime as _dt
import logging
import platform
from pathlib import Path
from typing import Optional, Sequence
from xml.sax.saxutils import escape

import numpy as np
import pandas as pd
import scipy

from maglab import _config
from maglab.constants import REPORT_FORMATS
from maglab.errors import InvalidParamsError
from maglab.utils import atomic_write_text, dump_json, sha256_text

logger = logging.getLogger("maglab")

_WIDTH, _HEIGHT, _PAD = 640, 400, 56
_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")


def frame_to_csv(frame: pd.DataFrame) -> str:
    return frame.to_csv(index=False, float_format="%.12g", lineterminator="\n")


def _ticks(lo: float, hi: float, count: int = 5) -> list[float]:
    if hi == lo:
        return [lo]
    return [lo + (hi - lo) * i / (count - 1) for i in range(count)]


def render_svg(x, series: dict, log_x: bool = False, title: str = "", x_label: str = "") -> str:
    """Plain SVG line chart; one polyline per finite series."""
    x = np.asarray(x, dtype=float)
    if log_x:
        keep = x > 0
        x = np.log10(np.where(keep, x, 1.0))
    else:
        keep = np.ones(len(x), dtype=bool)
    ys = {name: np.asarray(values, dtype=float) for name, values in series.items()}
    finite = [v[keep & np.isfinite(v)] for v in ys.values()]
    finite = [v for v in finite if len(v)]
    y_lo = min((float(v.min()) for v in finite), default=0.0)
    y_hi = max((float(v.max()) for v in finite), default=1.0)
    if y_hi == y_lo:
        y_hi = y_lo + 1.0
    x_lo = float(x[keep].min()) if keep.any() else 0.0
    x_hi = float(x[keep].max()) if keep.any() else 1.0
    if x_hi == x_lo:
        x_hi = x_lo + 1.0

    def sx(v):
        return _PAD + (v - x_lo) / (x_hi - x_lo) * (_WIDTH - 2 * _PAD)

    def sy(v):
        return _HEIGHT - _PAD - (v - y_lo) / (y_hi - y_lo) * (_HEIGHT - 2 * _PAD)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_WIDTH}" height="{_HEIGHT}" '
        f'viewBox="0 0 {_WIDTH} {_HEIGHT}">',
        f'<rect width="{_WIDTH}" height="{_HEIGHT}" fill="white"/>',
        f'<text x="{_WIDTH / 2:.1f}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<line x1="{_PAD}" y1="{_HEIGHT - _PAD}" x2="{_WIDTH - _PAD}" y2="{_HEIGHT - _PAD}" stroke="black"/>',
        f'<line x1="{_PAD}" y1="{_PAD}" x2="{_PAD}" y2="{_HEIGHT - _PAD}" stroke="black"/>',
    ]
    for t in _ticks(x_lo, x_hi):
        label = f"{10 ** t:.3g}" if log_x else f"{t:.3g}"
        parts.append(f'<text x="{sx(t):.1f}" y="{_HEIGHT - _PAD + 16}" text-anchor="middle" '
                     f'font-size="10">{label}</text>')
    for t in _ticks(y_lo, y_hi):
        parts.append(f'<text x="{_PAD - 6}" y="{sy(t) + 3:.1f}" text-anchor="end" font-size="10">{t:.4g}</text>')
    if x_label:
        parts.append(f'<text x="{_WIDTH / 2:.1f}" y="{_HEIGHT - 12}" text-anchor="middle" '
                     f'font-size="12">{escape(x_label)}</text>')
    for i, (name, values) in enumerate(ys.items()):
        color = _COLORS[i % len(_COLORS)]
        ok = keep & np.isfinite(values)
        points = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(x[ok], values[ok]))
        parts.append(f'<polyline class="series" data-name="{escape(name)}" fill="none" stroke="{color}" '
                     f'stroke-width="1.5" points="{points}"/>')
        parts.append(f'<text x="{_WIDTH - _PAD + 4}" y="{_PAD + 14 * i}" font-size="11" '
                     f'fill="{color}">{escape(name)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def emit_report(frame: pd.DataFrame, out_dir, name: str, report_format: Optional[str] = None,
                x: Optional[str] = None, y: Sequence[str] = (), log_x: bool = False,
                title: str = "") -> list[Path]:
    """Write ``<name>.csv`` and, for csv+svg, ``<name>.svg`` of the ``y`` columns against ``x``."""
    report_format = report_format or _config.REPORT_FORMAT or _config.DEFAULT_REPORT_FORMAT
    if report_format not in REPORT_FORMATS:
        raise InvalidParamsError(f"report format must be one of {REPORT_FORMATS}, got {report_format!r}")
    out_dir = Path(out_dir)
    written = [atomic_write_text(out_dir / f"{name}.csv", frame_to_csv(frame))]
    if report_format == "csv+svg" and x is not None and y:
        series = {col: frame[col].to_numpy(dtype=float) for col in y if col in frame}
        svg = render_svg(frame[x].to_numpy(dtype=float), series, log_x=log_x, title=title or name, x_label=x)
        written.append(atomic_write_text(out_dir / f"{name}.svg", svg))
    logger.info("Report %s: %d rows -> %s", name, len(frame), ", ".join(p.name for p in written))
    return written


def write_manifest(out_dir, config_text: str, config: dict, outputs: Sequence[Path], diagnostics: dict,
                   status: str) -> Path:
    """Reproducibility manifest; ``timestamp`` is the only field that differs between identical runs."""
    manifest = {
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "version": _config.VERSION,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pandas": pd.__version__,
        "config_sha256": sha256_text(config_text),
        "config": config,
        "outputs": sorted(Path(p).name for p in outputs),
        "diagnostics": diagnostics,
        "status": status,
    }
    return atomic_write_text(Path(out_dir) / "manifest.json", dump_json(manifest))


