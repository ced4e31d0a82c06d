"""Cluster-graph views of upper level sets.

Modes are placed in the plane by classical MDS. At each density level a mode
gets a circle whose radius is proportional to the fraction of data points in
its basin that lie above the level, and two modes are joined when their
basins touch inside the upper level set. Stacking several levels gives the
tomographic view; choosing the levels from bootstrap band half-widths gives
the confidence view.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import upper_level_set
from .kde import KDE
from .modes import BasinAssignment, ModeSet, basin_adjacency

LEVEL_FLOOR = 1e-12


class NothingToDraw(ValueError):
    """No mode has any data above any of the requested levels."""


def mode_index(assignment: BasinAssignment, model: KDE, level: float, n_modes: int | None = None,
               density: np.ndarray | None = None) -> np.ndarray:
    """``r[l] = #{i : basin(X_i) = l and p(X_i) >= level} / n``."""
    labels = np.asarray(assignment.labels)
    if len(labels) != model.n:
        raise ValueError("assignment must cover every data point of the model")
    if density is None:
        density = model.evaluate(model.data)
    k = int(labels.max()) + 1 if n_modes is None else n_modes
    counts = np.bincount(labels[density >= level], minlength=k)
    return counts / model.n


def classical_mds(modes) -> np.ndarray:
    """Torgerson scaling of the modes into the plane.

    The double-centred squared-distance matrix is diagonalized and the two
    leading eigenvectors are scaled by the root eigenvalues (negative
    eigenvalues clamp to zero). Each axis is flipped so that its
    largest-magnitude coordinate is positive.
    """
    pts = np.asarray(modes.modes if isinstance(modes, ModeSet) else modes, dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 1:
        raise ValueError("classical_mds needs at least one mode")
    if not np.all(np.isfinite(pts)):
        raise ValueError("mode coordinates must be finite")
    k = pts.shape[0]
    if k == 1:
        return np.zeros((1, 2))
    diff = pts[:, None, :] - pts[None, :, :]
    d2 = np.einsum("ijk,ijk->ij", diff, diff)
    if not np.all(np.isfinite(d2)):
        raise ValueError("non-finite distances between modes")
    J = np.eye(k) - 1.0 / k
    B = -0.5 * J @ d2 @ J
    B = 0.5 * (B + B.T)
    vals, vecs = np.linalg.eigh(B)
    top = np.argsort(vals)[::-1][:2]
    vals = np.clip(vals[top], 0.0, None)
    coords = vecs[:, top] * np.sqrt(vals)
    if coords.shape[1] < 2:
        coords = np.column_stack([coords, np.zeros(k)])
    for j in range(2):
        i = int(np.argmax(np.abs(coords[:, j])))
        if coords[i, j] < 0:
            coords[:, j] = -coords[:, j]
    coords[np.abs(coords) == 0] = 0.0  # drop negative zeros
    return coords


def confidence_levels(level: float, half_widths: dict[float, float]) -> list[tuple[float, float]]:
    """``(alpha, level - m_alpha)`` pairs sorted by ascending level.

    Levels are clamped below at ``1e-12``.
    """
    if level <= 0:
        raise ValueError("level must be positive")
    out = [(float(a), max(level - float(m), LEVEL_FLOOR)) for a, m in half_widths.items()]
    return sorted(out, key=lambda p: (p[1], -p[0]))


DEFAULT_STYLE = {
    "width": 640,
    "height": 480,
    "margin": 24,
    "legend_width": 150,
    "max_radius_frac": 0.10,
    "max_edge_width": 12.0,
    "light": "#dbe9f6",
    "dark": "#08306b",
    "edge": "#555555",
}


@dataclass
class Layer:
    level: float
    index: np.ndarray
    edges: list[tuple[int, int, float]]
    alpha: float | None = None


@dataclass
class ClusterGraph:
    positions: np.ndarray
    mode_density: np.ndarray
    layers: list[Layer]
    style: dict = field(default_factory=lambda: dict(DEFAULT_STYLE))
    meta: dict = field(default_factory=dict)

    @property
    def levels(self) -> list[float]:
        return [layer.level for layer in self.layers]

    def to_dict(self) -> dict:
        return {
            "modes": [
                {"id": i, "pos2d": [float(p[0]), float(p[1])], "density": float(d)}
                for i, (p, d) in enumerate(zip(self.positions, self.mode_density))
            ],
            "levels": [
                {
                    "lambda": layer.level,
                    **({"alpha": layer.alpha} if layer.alpha is not None else {}),
                    "circles": [{"mode": i, "r": float(r)} for i, r in enumerate(layer.index) if r > 0],
                    "edges": [{"a": a, "b": b, "width": w} for a, b, w in layer.edges],
                }
                for layer in self.layers
            ],
            "style": self.style,
            "meta": self.meta,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, obj: dict) -> ClusterGraph:
        modes = sorted(obj["modes"], key=lambda m: m["id"])
        k = len(modes)
        layers = []
        for lv in obj["levels"]:
            r = np.zeros(k)
            for c in lv["circles"]:
                r[c["mode"]] = c["r"]
            edges = [(int(e["a"]), int(e["b"]), float(e["width"])) for e in lv["edges"]]
            layers.append(Layer(float(lv["lambda"]), r, edges, lv.get("alpha")))
        return cls(
            positions=np.array([m["pos2d"] for m in modes], dtype=float).reshape(k, 2),
            mode_density=np.array([m["density"] for m in modes], dtype=float),
            layers=layers,
            style={**DEFAULT_STYLE, **obj.get("style", {})},
            meta=obj.get("meta", {}),
        )

    @classmethod
    def from_json(cls, text: str) -> ClusterGraph:
        return cls.from_dict(json.loads(text))


def build_cluster_graph(
    modes: ModeSet,
    assignment: BasinAssignment,
    model: KDE,
    levels,
    eps: float | None = None,
    alphas=None,
    style: dict | None = None,
) -> ClusterGraph:
    """Assemble one layer per level (ascending); edges carry ``r_a + r_b``."""
    levels = [float(v) for v in levels]
    if not levels:
        raise ValueError("need at least one level")
    if any(v <= 0 for v in levels) or any(b < a for a, b in zip(levels, levels[1:])):
        raise ValueError("levels must be positive and sorted ascending")
    if alphas is not None and len(alphas) != len(levels):
        raise ValueError("alphas must match levels one to one")
    eps = model.bandwidth if eps is None else float(eps)
    dens = model.evaluate(model.data)
    k = len(modes)
    layers = []
    for i, lv in enumerate(levels):
        r = mode_index(assignment, model, lv, k, dens)
        high = upper_level_set(dens, model.data, lv, eps)
        edges = [(a, b, float(r[a] + r[b])) for a, b in basin_adjacency(assignment, high, eps)]
        layers.append(Layer(lv, r, edges, None if alphas is None else float(alphas[i])))
    if all(not np.any(layer.index > 0) for layer in layers):
        raise NothingToDraw("no mode has data above any requested level")
    return ClusterGraph(
        positions=classical_mds(modes),
        mode_density=np.asarray(modes.density, dtype=float),
        layers=layers,
        style={**DEFAULT_STYLE, **(style or {})},
        meta={"bandwidth": model.bandwidth, "eps": eps, "n": model.n, "dim": model.dim},
    )


def _hex(c: str) -> np.ndarray:
    c = c.lstrip("#")
    return np.array([int(c[i : i + 2], 16) for i in (0, 2, 4)], dtype=float)


def color_ramp(k: int, light: str, dark: str) -> list[str]:
    a, b = _hex(light), _hex(dark)
    ts = [0.5] if k == 1 else np.linspace(0.0, 1.0, k)
    return ["#%02x%02x%02x" % tuple(int(round(v)) for v in a + t * (b - a)) for t in ts]


def _f(x: float) -> str:
    s = f"{x:.2f}"
    return "0.00" if s == "-0.00" else s


class SvgDoc:
    """Minimal line-oriented SVG builder with fixed number formatting."""

    def __init__(self, width: float, height: float):
        self.width, self.height = width, height
        self.body: list[str] = []

    def add(self, line: str) -> None:
        self.body.append(line)

    def circle(self, cx, cy, r, fill, stroke="none", opacity=1.0):
        self.add(f'<circle cx="{_f(cx)}" cy="{_f(cy)}" r="{_f(r)}" fill="{fill}" '
                 f'fill-opacity="{_f(opacity)}" stroke="{stroke}"/>')

    def line(self, x1, y1, x2, y2, stroke, width):
        self.add(f'<line x1="{_f(x1)}" y1="{_f(y1)}" x2="{_f(x2)}" y2="{_f(y2)}" '
                 f'stroke="{stroke}" stroke-width="{_f(width)}" stroke-linecap="round"/>')

    def rect(self, x, y, w, h, fill, opacity=1.0):
        self.add(f'<rect x="{_f(x)}" y="{_f(y)}" width="{_f(w)}" height="{_f(h)}" '
                 f'fill="{fill}" fill-opacity="{_f(opacity)}"/>')

    def polyline(self, pts, stroke, width):
        coords = " ".join(f"{_f(x)},{_f(y)}" for x, y in pts)
        self.add(f'<polyline points="{coords}" fill="none" stroke="{stroke}" stroke-width="{_f(width)}"/>')

    def text(self, x, y, s, size=12):
        s = s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
        self.add(f'<text x="{_f(x)}" y="{_f(y)}" font-family="sans-serif" font-size="{size}">{s}</text>')

    def render(self) -> str:
        head = (
            '<?xml version="1.0" encoding="UTF-8" standalone="no"?>\n'
            f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{_f(self.width)}" '
            f'height="{_f(self.height)}" viewBox="0 0 {_f(self.width)} {_f(self.height)}">\n'
            f'<rect x="0" y="0" width="{_f(self.width)}" height="{_f(self.height)}" fill="#ffffff"/>\n'
        )
        return head + "\n".join(self.body) + "\n</svg>\n"


def _layout(positions: np.ndarray, style: dict, pad: float) -> np.ndarray:
    """Map embedded mode positions into the plot area, same scale on both axes."""
    x0 = style["margin"] + pad
    y0 = style["margin"] + pad
    w = style["width"] - style["legend_width"] - 2 * (style["margin"] + pad)
    h = style["height"] - 2 * (style["margin"] + pad)
    lo, hi = positions.min(axis=0), positions.max(axis=0)
    span = hi - lo
    scale = min(w / span[0] if span[0] > 0 else np.inf, h / span[1] if span[1] > 0 else np.inf)
    if not np.isfinite(scale):
        scale = 0.0
    centre = (lo + hi) / 2
    out = np.empty_like(positions)
    out[:, 0] = x0 + w / 2 + (positions[:, 0] - centre[0]) * scale
    out[:, 1] = y0 + h / 2 - (positions[:, 1] - centre[1]) * scale
    return out


def render_svg(graph: ClusterGraph) -> str:
    """SVG text for the stacked layers; lower levels are drawn first."""
    st = graph.style
    max_r = st["max_radius_frac"] * st["width"]
    r_top = max((float(layer.index.max()) for layer in graph.layers), default=0.0)
    w_top = max((w for layer in graph.layers for _, _, w in layer.edges), default=0.0)
    xy = _layout(graph.positions, st, max_r)
    colors = color_ramp(len(graph.layers), st["light"], st["dark"])
    doc = SvgDoc(st["width"], st["height"])

    for layer, color in zip(graph.layers, colors):
        doc.add(f'<g class="level" data-lambda="{layer.level!r}">')
        for a, b, w in layer.edges:
            doc.line(*xy[a], *xy[b], st["edge"], st["max_edge_width"] * w / w_top)
        for i, r in enumerate(layer.index):
            if r > 0:
                doc.circle(*xy[i], max_r * r / r_top, color, stroke="#000000", opacity=0.9)
        doc.add("</g>")

    lx = st["width"] - st["legend_width"] + 8
    doc.text(lx, st["margin"] + 4, "levels")
    for j, (layer, color) in enumerate(zip(graph.layers, colors)):
        y = st["margin"] + 16 + 18 * j
        doc.rect(lx, y, 12, 12, color)
        label = f"lambda={layer.level:.4g}"
        if layer.alpha is not None:
            label = f"alpha={layer.alpha:.2f} ({label})"
        doc.text(lx + 18, y + 11, label, size=10)
    return doc.render()


def emit_svg(graph: ClusterGraph, path) -> Path:
    path = Path(path)
    path.write_text(render_svg(graph), encoding="utf-8")
    return path


REGION_COLORS = {"inside-high": "#f2c300", "inside-low": "#3aa655", "band": "#4a7bd0"}


def render_plane_svg(
    lower, upper, polylines=(), cells=None, points=None, size: int = 480, title: str | None = None,
) -> str:
    """2-D plot: optional coloured cells ``(x, y, w, h, color)``, scatter points
    and contour polylines, all in data coordinates."""
    lower, upper = np.asarray(lower, float), np.asarray(upper, float)
    span = upper - lower
    scale = (size - 40) / span.max()
    width = span[0] * scale + 40
    height = span[1] * scale + 40 + (16 if title else 0)
    top = 20 + (16 if title else 0)

    def tx(p):
        p = np.asarray(p, float)
        return np.column_stack([20 + (p[:, 0] - lower[0]) * scale, top + (upper[1] - p[:, 1]) * scale])

    doc = SvgDoc(width, height)
    if title:
        doc.text(20, 16, title)
    for x, y, w, h, color in cells or ():
        (px, py), = tx([[x, y + h]])
        doc.rect(px, py, w * scale, h * scale, color, opacity=0.85)
    if points is not None and len(points):
        for px, py in tx(points):
            doc.circle(px, py, 1.2, "#444444", opacity=0.6)
    for line in polylines:
        if len(line) > 1:
            doc.polyline(tx(line), "#000000", 1.5)
    doc.add(f'<rect x="20" y="{_f(top)}" width="{_f(span[0] * scale)}" height="{_f(span[1] * scale)}" '
            'fill="none" stroke="#000000"/>')
    return doc.render()
