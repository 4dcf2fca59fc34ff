"""Learning-curve SVGs and summaries from ``trainlog.csv``."""

import csv
import io
import os

import numpy as np

from .errors import CsvParseError

CURVES = ("mean_reward", "off_road", "overlap", "log_divergence")
X_COLUMN = "scenarios_consumed"

_W, _H = 480, 300
_ML, _MR, _MT, _MB = 64, 16, 28, 44


def read_trainlog(path, columns=(X_COLUMN, *CURVES)) -> dict:
    with open(path, newline="") as fh:
        return parse_trainlog(fh.read(), columns)


def parse_trainlog(text, columns=(X_COLUMN, *CURVES)) -> dict:
    """Parse the required numeric columns of a trainlog.

    Raises:
        CsvParseError: missing column, ragged row, or non-numeric cell; the
            message names the line (and column where relevant).
    """
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise CsvParseError("line 1: empty trainlog")
    header = rows[0]
    for col in columns:
        if col not in header:
            raise CsvParseError(f"line 1: missing column {col!r}")
    idx = {c: header.index(c) for c in columns}
    out = {c: [] for c in columns}
    for lineno, row in enumerate(rows[1:], 2):
        if not row:
            continue
        if len(row) != len(header):
            raise CsvParseError(f"line {lineno}: expected {len(header)} fields, found {len(row)}")
        for c, i in idx.items():
            try:
                out[c].append(float(row[i]))
            except ValueError:
                raise CsvParseError(f"line {lineno}, column {c!r}: not a number: {row[i]!r}") from None
    if not out[X_COLUMN]:
        raise CsvParseError("line 2: trainlog has no data rows")
    return {c: np.array(v) for c, v in out.items()}


def _num(v):
    return f"{v:.6g}"


def _range(v):
    lo, hi = float(np.min(v)), float(np.max(v))
    if hi - lo < 1e-12:
        pad = max(abs(lo) * 0.1, 1.0)
        return lo - pad, hi + pad
    return lo, hi


def render_svg(x, y, title, xlabel=X_COLUMN) -> str:
    """A static line chart; identical inputs give identical bytes."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    x0, x1 = _range(x)
    y0, y1 = _range(y)
    pw, ph = _W - _ML - _MR, _H - _MT - _MB

    def sx(v):
        return _ML + (v - x0) / (x1 - x0) * pw

    def sy(v):
        return _MT + (1.0 - (v - y0) / (y1 - y0)) * ph

    pts = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(x, y))
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" viewBox="0 0 {_W} {_H}">',
        f'<rect x="0" y="0" width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W / 2:.1f}" y="18" text-anchor="middle" font-family="sans-serif" font-size="14">{title}</text>',
        f'<line x1="{_ML}" y1="{_MT + ph}" x2="{_ML + pw}" y2="{_MT + ph}" stroke="black"/>',
        f'<line x1="{_ML}" y1="{_MT}" x2="{_ML}" y2="{_MT + ph}" stroke="black"/>',
    ]
    for t in np.linspace(0.0, 1.0, 5):
        xv, yv = x0 + t * (x1 - x0), y0 + t * (y1 - y0)
        parts.append(f'<text x="{sx(xv):.2f}" y="{_MT + ph + 16}" text-anchor="middle" font-family="sans-serif" '
                     f'font-size="10">{_num(xv)}</text>')
        parts.append(f'<text x="{_ML - 6}" y="{sy(yv) + 3:.2f}" text-anchor="end" font-family="sans-serif" '
                     f'font-size="10">{_num(yv)}</text>')
    parts.append(f'<text x="{_ML + pw / 2:.1f}" y="{_H - 8}" text-anchor="middle" font-family="sans-serif" '
                 f'font-size="11">{xlabel}</text>')
    parts.append(f'<polyline fill="none" stroke="#1f5fbf" stroke-width="2" points="{pts}"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def plot_trainlog(trainlog, out_dir) -> list:
    """Write one SVG per learning curve plus ``summary.csv``; returns written paths."""
    data = read_trainlog(trainlog)
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for name in CURVES:
        path = os.path.join(out_dir, f"{name}.svg")
        with open(path, "w", newline="\n") as fh:
            fh.write(render_svg(data[X_COLUMN], data[name], name))
        written.append(path)
    path = os.path.join(out_dir, "summary.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "first", "last", "min", "max", "mean"])
        for name in CURVES:
            v = data[name]
            w.writerow([name] + [f"{float(s):.9g}" for s in (v[0], v[-1], v.min(), v.max(), v.mean())])
    written.append(path)
    return written
