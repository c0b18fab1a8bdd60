"""Learning-curve plots: EMA smoothing, min/max seed bands, direct SVG output.

Plots are emitted as standalone SVG plus a numeric sidecar CSV holding the
post-smoothing values, so any external tool can reproduce the figure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass
class PlotSpec:
    x_column: str = "env_steps"
    y_column: str = "eval_return_mean"
    group_column: str = "run"      # one curve per distinct value
    ema: float = 0.9               # smoothing factor; 0 reproduces the raw curve
    title: str = "evaluation return"
    width: int = 640
    height: int = 400


def ema_smooth(values: np.ndarray, factor: float) -> np.ndarray:
    """Exponential moving average; factor 0 returns the input unchanged."""
    if not 0.0 <= factor < 1.0:
        raise ValueError("ema factor must be in [0, 1)")
    out = np.empty_like(np.asarray(values, dtype=np.float64))
    acc = None
    for i, v in enumerate(values):
        acc = v if acc is None else factor * acc + (1.0 - factor) * v
        out[i] = acc
    return out


def read_metrics_csv(path) -> dict[str, np.ndarray]:
    lines = Path(path).read_text().strip().splitlines()
    lines = [l for l in lines if not l.startswith("#")]
    if not lines:
        raise ValueError(f"{path}: empty metrics file")
    header = lines[0].split(",")
    rows = [l.split(",") for l in lines[1:]]
    cols = {}
    for i, name in enumerate(header):
        cols[name] = np.array([float(r[i]) for r in rows])
    return cols


def emit_plot(csv_paths: dict[str, str | Path], spec: PlotSpec,
              out_svg: str | Path) -> Path:
    """One curve per group; multiple files in a group form a min/max band.

    `csv_paths` maps group label -> list of metrics CSV paths (one per seed).
    Writes the SVG and a `<out>.csv` sidecar of the smoothed values.
    """
    out_svg = Path(out_svg)
    curves = {}
    for label, paths in csv_paths.items():
        if isinstance(paths, (str, Path)):
            paths = [paths]
        series = []
        for p in paths:
            cols = read_metrics_csv(p)
            for c in (spec.x_column, spec.y_column):
                if c not in cols:
                    raise ValueError(f"{p}: missing column '{c}'")
            y = ema_smooth(cols[spec.y_column], spec.ema)
            series.append((cols[spec.x_column], y))
        n = min(len(x) for x, _ in series)
        x = series[0][0][:n]
        ys = np.stack([y[:n] for _, y in series])
        curves[label] = (x, ys.mean(axis=0), ys.min(axis=0), ys.max(axis=0))

    _write_sidecar(out_svg.with_suffix(".csv"), spec, curves)
    out_svg.write_text(_render_svg(curves, spec))
    return out_svg


def _write_sidecar(path: Path, spec: PlotSpec, curves) -> None:
    lines = [f"group,{spec.x_column},mean,min,max"]
    for label, (x, mean, lo, hi) in curves.items():
        for i in range(len(x)):
            lines.append(f"{label},{x[i]:.12g},{mean[i]:.12g},"
                         f"{lo[i]:.12g},{hi[i]:.12g}")
    path.write_text("\n".join(lines) + "\n")


_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]


def _render_svg(curves, spec: PlotSpec) -> str:
    w, h = spec.width, spec.height
    ml, mr, mt, mb = 60, 20, 30, 45
    xs = np.concatenate([c[0] for c in curves.values()])
    ys = np.concatenate([np.concatenate([c[2], c[3]]) for c in curves.values()])
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = float(ys.min()), float(ys.max())
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0

    def px(x):
        return ml + (x - x0) / (x1 - x0) * (w - ml - mr)

    def py(y):
        return h - mb - (y - y0) / (y1 - y0) * (h - mt - mb)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}">',
        f'<rect width="{w}" height="{h}" fill="white"/>',
        f'<text x="{w / 2:.0f}" y="18" text-anchor="middle" '
        f'font-family="sans-serif" font-size="13">{spec.title}</text>',
    ]
    # axes
    parts.append(f'<line x1="{ml}" y1="{h - mb}" x2="{w - mr}" y2="{h - mb}" '
                 'stroke="black"/>')
    parts.append(f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{h - mb}" '
                 'stroke="black"/>')
    for frac in (0.0, 0.5, 1.0):
        xv = x0 + frac * (x1 - x0)
        yv = y0 + frac * (y1 - y0)
        parts.append(f'<text x="{px(xv):.1f}" y="{h - mb + 16}" '
                     f'text-anchor="middle" font-family="sans-serif" '
                     f'font-size="11">{xv:.4g}</text>')
        parts.append(f'<text x="{ml - 6}" y="{py(yv) + 4:.1f}" '
                     f'text-anchor="end" font-family="sans-serif" '
                     f'font-size="11">{yv:.4g}</text>')
    parts.append(f'<text x="{(ml + w - mr) / 2:.0f}" y="{h - 8}" '
                 f'text-anchor="middle" font-family="sans-serif" '
                 f'font-size="12">{spec.x_column}</text>')

    for i, (label, (x, mean, lo, hi)) in enumerate(curves.items()):
        color = _COLORS[i % len(_COLORS)]
        band = " ".join(f"{px(x[j]):.1f},{py(hi[j]):.1f}" for j in range(len(x)))
        band += " " + " ".join(f"{px(x[j]):.1f},{py(lo[j]):.1f}"
                               for j in range(len(x) - 1, -1, -1))
        parts.append(f'<polygon points="{band}" fill="{color}" opacity="0.15"/>')
        line = " ".join(f"{px(x[j]):.1f},{py(mean[j]):.1f}" for j in range(len(x)))
        parts.append(f'<polyline points="{line}" fill="none" stroke="{color}" '
                     'stroke-width="1.5"/>')
        parts.append(f'<text x="{w - mr - 5}" y="{mt + 15 * (i + 1)}" '
                     f'text-anchor="end" font-family="sans-serif" font-size="11" '
                     f'fill="{color}">{label}</text>')
    parts.append("</svg>")
    return "\n".join(parts)
