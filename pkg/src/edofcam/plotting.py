"""Minimal PNG plot rasterization: line plots and heatmaps, no text.

Deliberately dependency-free rendering (numbers always accompany plots as
CSV, so the images are quick-look aids, not the record).
"""

from __future__ import annotations

import numpy as np

from .fileio import save_png

_COLORS = ((214, 39, 40), (44, 160, 44), (31, 119, 180), (255, 127, 14),
           (148, 103, 189), (140, 86, 75))


def line_plot(path, series: list[tuple[np.ndarray, np.ndarray]],
              size: tuple[int, int] = (480, 640),
              y_range: tuple[float, float] | None = None) -> None:
    """Rasterize (x, y) polylines onto a framed canvas and save as PNG."""
    height, width = size
    canvas = np.full((height, width, 3), 255, dtype=np.uint8)
    margin = 24
    x_all = np.concatenate([np.asarray(s[0], dtype=np.float64) for s in series])
    y_all = np.concatenate([np.asarray(s[1], dtype=np.float64) for s in series])
    x_lo, x_hi = float(x_all.min()), float(x_all.max())
    if y_range is None:
        y_lo, y_hi = float(y_all.min()), float(y_all.max())
    else:
        y_lo, y_hi = y_range
    x_span = (x_hi - x_lo) or 1.0
    y_span = (y_hi - y_lo) or 1.0

    canvas[margin, margin:width - margin] = 0
    canvas[height - margin, margin:width - margin] = 0
    canvas[margin:height - margin, margin] = 0
    canvas[margin:height - margin, width - margin] = 0

    for k, (x, y) in enumerate(series):
        color = np.array(_COLORS[k % len(_COLORS)], dtype=np.uint8)
        px = margin + (np.asarray(x) - x_lo) / x_span * (width - 2 * margin - 1)
        py = (height - margin) - (np.asarray(y) - y_lo) / y_span * (height - 2 * margin - 1)
        for i in range(len(px) - 1):
            steps = int(max(abs(px[i + 1] - px[i]), abs(py[i + 1] - py[i]))) + 1
            xs = np.linspace(px[i], px[i + 1], steps).round().astype(int)
            ys = np.linspace(py[i], py[i + 1], steps).round().astype(int)
            keep = (xs >= 0) & (xs < width) & (ys >= 0) & (ys < height)
            canvas[ys[keep], xs[keep]] = color

    save_png(path, canvas / 255.0, bit_depth=8)


def heatmap(path, values: np.ndarray, log_floor: float | None = None) -> None:
    """Save a 2D array as a grayscale PNG, optionally log-scaled."""
    arr = np.asarray(values, dtype=np.float64)
    if log_floor is not None:
        arr = np.log10(np.maximum(arr, log_floor))
    lo, hi = float(arr.min()), float(arr.max())
    span = (hi - lo) or 1.0
    save_png(path, (arr - lo) / span, bit_depth=8)
