"""Plain SVG figures: trajectories over the obstacle, boundary-set membership."""

from __future__ import annotations

from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np
from skimage.measure import find_contours

from .certificates import Scenario

GRID = 400
SIZE = 600
MARGIN = 40
MAX_POLYLINE_POINTS = 2000

CONTROLLER_COLORS = {
    "cbf_qp": "#1f77b4",
    "penalty_qp": "#ff7f0e",
    "dcp": "#2ca02c",
}
MEMBERSHIP_COLORS = {
    "Q": "#d62728",
    "X": "#ff7f0e",
    "S": "#9467bd",
    "Omega": "#17becf",
    "none": "#bbbbbb",
}


def level_set(fn, xlim, ylim, grid: int = GRID) -> list[np.ndarray]:
    """Polylines of ``fn = 0`` by marching squares on a ``grid x grid`` lattice."""
    xs = np.linspace(xlim[0], xlim[1], grid)
    ys = np.linspace(ylim[0], ylim[1], grid)
    X, Y = np.meshgrid(xs, ys)
    try:
        H = np.asarray(fn(np.array([X, Y])), dtype=float)
        if H.shape != X.shape:
            raise ValueError
    except (ValueError, TypeError, IndexError):
        # Not vectorized: evaluate point by point.
        H = np.array([[fn(np.array([x, y])) for x in xs] for y in ys], dtype=float)
    lines = []
    for c in find_contours(H, 0.0):
        rows, cols = c[:, 0], c[:, 1]
        lines.append(np.column_stack([np.interp(cols, np.arange(grid), xs),
                                      np.interp(rows, np.arange(grid), ys)]))
    return lines


class _Canvas:
    def __init__(self, xlim, ylim):
        self.xlim = xlim
        self.ylim = ylim
        span = max(xlim[1] - xlim[0], ylim[1] - ylim[0])
        self.scale = (SIZE - 2 * MARGIN) / span
        self.parts: list[str] = []

    def map(self, p):
        x = MARGIN + (p[0] - self.xlim[0]) * self.scale
        y = SIZE - MARGIN - (p[1] - self.ylim[0]) * self.scale
        return x, y

    def polyline(self, pts, color, width=1.5, dash=None, label=None):
        pts = np.asarray(pts)
        if len(pts) > MAX_POLYLINE_POINTS:
            idx = np.unique(np.linspace(0, len(pts) - 1, MAX_POLYLINE_POINTS).astype(int))
            pts = pts[idx]
        coords = " ".join(f"{x:.2f},{y:.2f}" for x, y in (self.map(p) for p in pts))
        extra = f' stroke-dasharray="{dash}"' if dash else ""
        title = f"<title>{escape(label)}</title>" if label else ""
        self.parts.append(f'<polyline points="{coords}" fill="none" stroke="{color}" '
                          f'stroke-width="{width}"{extra}>{title}</polyline>')

    def circle(self, p, r, color, label=None):
        x, y = self.map(p)
        title = f"<title>{escape(label)}</title>" if label else ""
        self.parts.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="{r}" fill="{color}">{title}</circle>')

    def plus(self, p, color="#000000", size=6):
        x, y = self.map(p)
        self.parts.append(f'<path d="M{x - size:.2f},{y:.2f}H{x + size:.2f}M{x:.2f},{y - size:.2f}'
                          f'V{y + size:.2f}" stroke="{color}" stroke-width="2"/>')

    def star(self, p, color="#ff7f0e", r=8, label=None):
        x, y = self.map(p)
        pts = []
        for i in range(10):
            rad = r if i % 2 == 0 else r * 0.45
            ang = -np.pi / 2 + i * np.pi / 5
            pts.append(f"{x + rad * np.cos(ang):.2f},{y + rad * np.sin(ang):.2f}")
        title = f"<title>{escape(label)}</title>" if label else ""
        self.parts.append(f'<polygon points="{" ".join(pts)}" fill="{color}" stroke="#000000" '
                          f'stroke-width="0.5">{title}</polygon>')

    def text(self, x, y, s, color="#000000", size=12):
        self.parts.append(f'<text x="{x}" y="{y}" font-family="sans-serif" font-size="{size}" '
                          f'fill="{color}">{escape(s)}</text>')

    def render(self) -> str:
        head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" '
                f'viewBox="0 0 {SIZE} {SIZE}">')
        frame = (f'<rect x="{MARGIN}" y="{MARGIN}" width="{SIZE - 2 * MARGIN}" '
                 f'height="{SIZE - 2 * MARGIN}" fill="#ffffff" stroke="#888888"/>')
        return "\n".join([head, frame, *self.parts, "</svg>"]) + "\n"


def _view(points, scenario: Scenario):
    """Bounding square of the points and the obstacle, with a margin."""
    coarse = level_set(scenario.cbf.value, scenario.domain[0], scenario.domain[1], grid=120)
    pts = [np.zeros((1, 2))] + [np.atleast_2d(p) for p in points if len(p)] + coarse
    allp = np.vstack(pts)
    lo = allp.min(axis=0)
    hi = allp.max(axis=0)
    center = (lo + hi) / 2
    half = max(hi - lo) / 2 * 1.1 + 0.5
    return (center[0] - half, center[0] + half), (center[1] - half, center[1] + half)


def _draw_obstacle(canvas: _Canvas, scenario: Scenario):
    for line in level_set(scenario.cbf.value, canvas.xlim, canvas.ylim):
        canvas.polyline(line, "#000000", width=2.0, label="h = 0")


def trajectories_svg(scenario: Scenario, records, equilibria=(), title: str = "") -> str:
    """Trajectories coloured by controller, the obstacle boundary, initial
    conditions (black plus) and detected undesired equilibria (stars)."""
    pts = [r.states for r in records] + [np.asarray(e) for e in equilibria]
    xlim, ylim = _view(pts, scenario)
    canvas = _Canvas(xlim, ylim)
    _draw_obstacle(canvas, scenario)
    for r in records:
        color = CONTROLLER_COLORS.get(r.controller, "#444444")
        canvas.polyline(r.states, color, label=f"{r.controller}: {r.outcome.kind.value}")
    for r in records:
        if len(r):
            canvas.plus(r.states[0])
    for e in equilibria:
        canvas.star(e, label=f"equilibrium ({e[0]:.3f}, {e[1]:.3f})")
    canvas.circle((0.0, 0.0), 3, "#000000", label="origin")
    for i, (name, color) in enumerate(CONTROLLER_COLORS.items()):
        if any(r.controller == name for r in records):
            canvas.text(MARGIN + 10 + 90 * i, 20, name, color)
    if title:
        canvas.text(MARGIN + 300, 20, title)
    return canvas.render()


def membership(sample) -> str:
    if sample.in_Q:
        return "Q"
    if sample.in_X:
        return "X"
    if sample.in_S:
        return "S"
    if sample.in_Omega:
        return "Omega"
    return "none"


def boundary_svg(scenario: Scenario, classified, title: str = "") -> str:
    """Boundary samples coloured by their most specific set (Q, X, S, Omega or none)."""
    xs = np.array([s.x for s in classified])
    xlim, ylim = _view([xs], scenario)
    canvas = _Canvas(xlim, ylim)
    _draw_obstacle(canvas, scenario)
    for s in classified:
        tag = membership(s)
        canvas.circle(s.x, 2.5 if tag != "none" else 1.5, MEMBERSHIP_COLORS[tag],
                      label=f"{tag}: u_bar_h={s.u_bar_h:.4g}")
    for i, (tag, color) in enumerate(MEMBERSHIP_COLORS.items()):
        canvas.text(MARGIN + 10 + 80 * i, 20, tag, color)
    if title:
        canvas.text(MARGIN + 10, SIZE - 12, title)
    return canvas.render()


def write_svg(text: str, path: str | Path) -> None:
    Path(path).write_text(text)
