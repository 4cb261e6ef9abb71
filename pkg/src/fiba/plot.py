"""Tiny raster plotter: polylines and overlaid histograms on a white canvas.

There is no text rendering. Series colours follow :data:`PALETTE` in call
order, and axis ranges are written to the accompanying TSV/report instead.
"""
import numpy as np

from fiba import pngio

PALETTE = np.array([
    (31, 119, 180), (214, 39, 40), (44, 160, 44), (255, 127, 14), (148, 103, 189),
], dtype=float) / 255.0
MARGIN = 12


def _canvas(width, height):
    img = np.ones((height, width, 3))
    axis = np.array([0.2, 0.2, 0.2])
    img[MARGIN:height - MARGIN + 1, MARGIN] = axis
    img[height - MARGIN, MARGIN:width - MARGIN + 1] = axis
    return img


def _to_pixels(xs, ys, xlim, ylim, width, height):
    (x0, x1), (y0, y1) = xlim, ylim
    sx = (width - 2 * MARGIN) / ((x1 - x0) or 1.0)
    sy = (height - 2 * MARGIN) / ((y1 - y0) or 1.0)
    px = MARGIN + (np.asarray(xs, dtype=float) - x0) * sx
    py = height - MARGIN - (np.asarray(ys, dtype=float) - y0) * sy
    return px, py


def _segment(img, p, q, color, thickness=1):
    n = int(max(abs(q[0] - p[0]), abs(q[1] - p[1]))) * 2 + 1
    t = np.linspace(0.0, 1.0, n)
    xs = np.rint(p[0] + (q[0] - p[0]) * t).astype(int)
    ys = np.rint(p[1] + (q[1] - p[1]) * t).astype(int)
    h, w = img.shape[:2]
    r = thickness // 2
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            ok = (ys + dy >= 0) & (ys + dy < h) & (xs + dx >= 0) & (xs + dx < w)
            img[ys[ok] + dy, xs[ok] + dx] = color


def line_plot(series, width=320, height=200, ylim=(0.0, 1.0)):
    """Render ``[(xs, ys), ...]`` as polylines; returns a float RGB image."""
    img = _canvas(width, height)
    allx = np.concatenate([np.asarray(x, dtype=float) for x, _ in series])
    xlim = (allx.min(), allx.max())
    for k, (xs, ys) in enumerate(series):
        px, py = _to_pixels(xs, ys, xlim, ylim, width, height)
        color = PALETTE[k % len(PALETTE)]
        for i in range(len(px) - 1):
            _segment(img, (px[i], py[i]), (px[i + 1], py[i + 1]), color, thickness=2)
        for x, y in zip(px, py):
            _segment(img, (x - 2, y), (x + 2, y), color, thickness=3)
    return img


def histograms(samples, bins=20, width=320, height=200, value_range=None):
    """Overlaid, semi-transparent histograms of each sample set."""
    img = _canvas(width, height)
    allv = np.concatenate([np.asarray(s, dtype=float) for s in samples])
    lo, hi = value_range if value_range else (allv.min(), allv.max())
    if hi <= lo:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, bins + 1)
    counts = [np.histogram(s, edges)[0] for s in samples]
    top = max(int(c.max()) for c in counts) or 1
    for k, c in enumerate(counts):
        color = PALETTE[k % len(PALETTE)]
        x0s, _ = _to_pixels(edges[:-1], np.zeros(bins), (lo, hi), (0, top), width, height)
        x1s, ys = _to_pixels(edges[1:], c, (lo, hi), (0, top), width, height)
        for a, b, y in zip(x0s, x1s, ys):
            ya, xa, xb = int(np.rint(y)), int(np.rint(a)) + 1, int(np.rint(b))
            region = img[ya:height - MARGIN, xa:xb]
            region[:] = 0.55 * region + 0.45 * color
    return img


def save(path, image):
    pngio.write_image(path, np.clip(image, 0.0, 1.0))
