"""Level-set extraction on grids and point clouds, set distances, and
epsilon-graph connected components."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .kde import KDE, GridSpec, as_points

# float64 entries per chunk of a pairwise-distance block
_PAIR_CHUNK = 2**22


class EmptySetError(ValueError):
    """A set distance was requested with an empty operand."""


@dataclass(frozen=True, eq=False)
class LevelSetApprox:
    """Discretized ``{x : density(x) = level}``.

    ``points`` always holds every vertex; ``polylines`` is filled only by the
    2-D contour tracer. Closed polylines repeat their first vertex at the end.
    ``tolerance`` is the largest ``|density(v) - level|`` known to hold for the
    vertices, or None when it was never measured.
    """

    level: float
    points: np.ndarray
    polylines: list[np.ndarray] | None = None
    tolerance: float | None = None
    source: dict = field(default_factory=dict)

    @property
    def empty(self) -> bool:
        return self.points.shape[0] == 0

    def __len__(self) -> int:
        return self.points.shape[0]

    def measured(self, density: Callable[[np.ndarray], np.ndarray]) -> LevelSetApprox:
        """Copy with ``tolerance`` set from re-evaluating ``density`` at the vertices."""
        tol = 0.0 if self.empty else float(np.max(np.abs(density(self.points) - self.level)))
        return replace(self, tolerance=tol)

    def to_dict(self) -> dict:
        out = {"level": self.level, "tolerance": self.tolerance, "source": self.source}
        if self.polylines is not None:
            out["polylines"] = [p.tolist() for p in self.polylines]
        else:
            out["points"] = self.points.tolist()
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> LevelSetApprox:
        if "polylines" in obj:
            lines = [np.asarray(p, dtype=float).reshape(-1, 2) for p in obj["polylines"]]
            pts = _polyline_vertices(lines)
            return cls(obj["level"], pts, lines, obj.get("tolerance"), obj.get("source", {}))
        pts = np.asarray(obj["points"], dtype=float)
        return cls(obj["level"], pts.reshape(len(pts), -1), None, obj.get("tolerance"), obj.get("source", {}))


@dataclass(frozen=True, eq=False)
class UpperLevelSetApprox:
    """Reference points with density at least ``level``, split into
    epsilon-connected components.

    ``index`` maps members back into the reference set; ``labels`` has one
    component id per member.
    """

    level: float
    points: np.ndarray
    index: np.ndarray
    labels: np.ndarray
    eps: float

    @property
    def n_components(self) -> int:
        return int(self.labels.max()) + 1 if self.labels.size else 0


def _polyline_vertices(lines: list[np.ndarray]) -> np.ndarray:
    parts = []
    for line in lines:
        closed = len(line) > 2 and np.array_equal(line[0], line[-1])
        parts.append(line[:-1] if closed else line)
    return np.concatenate(parts) if parts else np.empty((0, 2))


def _check_values(values: np.ndarray, grid: GridSpec) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if values.shape != grid.shape:
        raise ValueError(f"values shape {values.shape} does not match grid {grid.shape}")
    if not np.all(np.isfinite(values)):
        raise ValueError("grid values must be finite")
    return values


def _axis_crossings(values: np.ndarray, axes: list[np.ndarray], level: float, k: int):
    """Crossings on the grid edges parallel to axis ``k``.

    Returns the lower-node multi-indices of crossing edges and the linear
    interpolation parameter along each edge.
    """
    inside = values >= level
    lo = [slice(None)] * values.ndim
    hi = [slice(None)] * values.ndim
    lo[k], hi[k] = slice(None, -1), slice(1, None)
    v0, v1 = values[tuple(lo)], values[tuple(hi)]
    idx = np.nonzero(inside[tuple(lo)] != inside[tuple(hi)])
    a, b = v0[idx], v1[idx]
    t = (level - a) / (b - a)
    return idx, t


def _edge_points(idx, t, axes: list[np.ndarray], k: int) -> np.ndarray:
    cols = []
    for j, ax in enumerate(axes):
        if j == k:
            i = idx[j]
            cols.append(ax[i] + t * (ax[i + 1] - ax[i]))
        else:
            cols.append(ax[idx[j]])
    return np.stack(cols, axis=1) if cols else np.empty((0, len(axes)))


def grid_crossings(values: np.ndarray, grid: GridSpec, level: float) -> np.ndarray:
    """Every point where the piecewise-linear edge interpolant of ``values``
    equals ``level``, over all grid edges in any dimension.

    In 2-D this is exactly the vertex set of the marching-squares contour.
    """
    values = _check_values(values, grid)
    axes = grid.axes()
    parts = []
    for k in range(grid.dim):
        idx, t = _axis_crossings(values, axes, level, k)
        parts.append(_edge_points(idx, t, axes, k))
    return np.concatenate(parts) if parts else np.empty((0, grid.dim))


# cell corner -> (edge, edge) around it; edges: 0 bottom, 1 right, 2 top, 3 left
_CORNER_EDGES = {0: (0, 3), 1: (0, 1), 2: (1, 2), 3: (2, 3)}


def extract_contour_2d(
    values: np.ndarray,
    grid: GridSpec,
    level: float,
    refine: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None,
) -> LevelSetApprox:
    """Marching-squares contour of a 2-D grid at ``level``.

    Vertices are linear interpolations along cell edges, so the bilinear
    interpolant equals ``level`` at each of them. Saddle cells are resolved
    by the mean of the four corners. ``refine(points, axis)`` may move each
    vertex along its edge (``axis`` is 0 or 1) before the polylines are
    assembled.
    """
    if grid.dim != 2:
        raise ValueError("extract_contour_2d requires a 2-D grid")
    values = _check_values(values, grid)
    axes = grid.axes()
    nx, ny = grid.shape

    ix, tx = _axis_crossings(values, axes, level, 0)
    iy, ty = _axis_crossings(values, axes, level, 1)
    px = _edge_points(ix, tx, axes, 0)
    py = _edge_points(iy, ty, axes, 1)
    points = np.concatenate([px, py])
    edge_axis = np.concatenate([np.zeros(len(px), dtype=int), np.ones(len(py), dtype=int)])
    if refine is not None and len(points):
        points = np.asarray(refine(points, edge_axis), dtype=float)

    # vertex id per edge; x-edges are indexed by their lower node (i, j), i < nx-1
    xid = -np.ones((nx - 1, ny), dtype=np.int64)
    xid[ix] = np.arange(len(px))
    yid = -np.ones((nx, ny - 1), dtype=np.int64)
    yid[iy] = np.arange(len(py)) + len(px)

    inside = values >= level
    # per cell: edge vertex ids in order bottom, right, top, left
    cell_edges = np.stack([xid[:, :-1], yid[1:, :], xid[:, 1:], yid[:-1, :]], axis=-1)
    ci, cj = np.nonzero((cell_edges >= 0).any(axis=-1))

    neighbours: dict[int, list[int]] = {}

    def link(a: int, b: int) -> None:
        neighbours.setdefault(a, []).append(b)
        neighbours.setdefault(b, []).append(a)

    for i, j in zip(ci.tolist(), cj.tolist()):
        e = cell_edges[i, j]
        hits = [int(v) for v in e if v >= 0]
        if len(hits) == 2:
            link(*hits)
            continue
        corners = (inside[i, j], inside[i + 1, j], inside[i + 1, j + 1], inside[i, j + 1])
        centre_in = values[i : i + 2, j : j + 2].mean() >= level
        for c, state in enumerate(corners):
            # isolate the corners of the minority state at the saddle
            if state != centre_in:
                a, b = _CORNER_EDGES[c]
                link(int(e[a]), int(e[b]))

    polylines = _chain(neighbours, points)
    return LevelSetApprox(
        level=float(level),
        points=points,
        polylines=polylines,
        tolerance=None,
        source={"kind": "grid-contour", "grid": grid.to_dict()},
    )


def _chain(neighbours: dict[int, list[int]], points: np.ndarray) -> list[np.ndarray]:
    """Walk the vertex adjacency into polylines: open chains first, then loops."""
    seen: set[int] = set()
    lines = []

    def walk(start: int) -> list[int]:
        path = [start]
        seen.add(start)
        prev, cur = -1, start
        while True:
            nxt = [v for v in neighbours[cur] if v != prev and v not in seen]
            if not nxt:
                if len(path) > 2 and start in neighbours[cur] and prev != start:
                    path.append(start)
                return path
            prev, cur = cur, nxt[0]
            path.append(cur)
            seen.add(cur)

    order = sorted(neighbours)
    for v in order:
        if v not in seen and len(neighbours[v]) == 1:
            lines.append(walk(v))
    for v in order:
        if v not in seen:
            lines.append(walk(v))
    return [points[p] for p in lines]


def densify(polylines: list[np.ndarray], max_spacing: float) -> np.ndarray:
    """Vertices of the polylines plus evenly spaced points on every segment,
    so that consecutive points are at most ``max_spacing`` apart."""
    if max_spacing <= 0:
        raise ValueError("max_spacing must be positive")
    parts = []
    for line in polylines:
        line = np.asarray(line, dtype=float)
        if len(line) < 2:
            parts.append(line)
            continue
        a, b = line[:-1], line[1:]
        pieces = np.maximum(1, np.ceil(np.linalg.norm(b - a, axis=1) / max_spacing).astype(int))
        seg = np.repeat(np.arange(len(a)), pieces)
        start = np.repeat(np.cumsum(pieces) - pieces, pieces)
        t = ((np.arange(len(seg)) - start) / pieces[seg])[:, None]
        parts.append(a[seg] + t * (b[seg] - a[seg]))
        parts.append(line[-1:])
    return np.concatenate(parts) if parts else np.empty((0, 2))


def extract_levelset_points(model: KDE, candidates, level: float, tol: float) -> LevelSetApprox:
    """Candidates whose estimated density lies within ``tol`` of ``level``."""
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    pts = as_points(candidates, dim=model.dim)
    dens = model.evaluate(pts)
    keep = np.abs(dens - level) <= tol
    return LevelSetApprox(
        level=float(level),
        points=pts[keep],
        tolerance=float(tol),
        source={"kind": "point-filter", "candidates": int(len(pts))},
    )


def _nearest_sq(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Squared distance from each row of A to its nearest row of B, exhaustively."""
    out = np.empty(A.shape[0])
    step = max(1, _PAIR_CHUNK // max(1, B.shape[0]))
    cols = [np.ascontiguousarray(B[:, k]) for k in range(B.shape[1])]
    for s in range(0, A.shape[0], step):
        block = A[s : s + step]
        # coordinates summed left to right, matching a plain sequential sum
        sq = np.subtract.outer(block[:, 0], cols[0])
        sq *= sq
        for k in range(1, B.shape[1]):
            dk = np.subtract.outer(block[:, k], cols[k])
            dk *= dk
            sq += dk
        out[s : s + step] = sq.min(axis=1)
    return out


def _pair(A, B) -> tuple[np.ndarray, np.ndarray]:
    A = np.asarray(A.points if isinstance(A, LevelSetApprox) else A, dtype=float)
    B = np.asarray(B.points if isinstance(B, LevelSetApprox) else B, dtype=float)
    if A.ndim == 1:
        A = A.reshape(-1, 1)
    if B.ndim == 1:
        B = B.reshape(-1, 1)
    if A.shape[0] == 0 or B.shape[0] == 0:
        raise EmptySetError("Hausdorff distance is undefined for an empty set")
    if A.shape[1] != B.shape[1]:
        raise ValueError("point sets have different dimensions")
    return A, B


def directed_max_dist(A, B) -> float:
    """``max_{a in A} min_{b in B} |a - b|``."""
    A, B = _pair(A, B)
    return float(np.sqrt(_nearest_sq(A, B).max()))


def hausdorff(A, B) -> float:
    """Hausdorff distance between two finite point sets."""
    A, B = _pair(A, B)
    return float(np.sqrt(max(_nearest_sq(A, B).max(), _nearest_sq(B, A).max())))


def connected_components_eps(points, eps: float) -> np.ndarray:
    """Components of the graph joining points at distance ``<= eps``.

    Labels are numbered in order of each component's smallest member index,
    so point 0 is always in component 0.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    pts = np.asarray(points, dtype=float)
    n = pts.shape[0]
    if n == 0:
        return np.empty(0, dtype=np.int64)
    if np.isinf(eps):
        return np.zeros(n, dtype=np.int64)
    pairs = cKDTree(pts.reshape(n, -1)).query_pairs(r=eps, output_type="ndarray")
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    _, raw = connected_components(graph, directed=False)
    _, first = np.unique(raw, return_index=True)
    rank = np.empty(len(first), dtype=np.int64)
    rank[np.argsort(first)] = np.arange(len(first))
    return rank[raw]


def upper_level_set(density: np.ndarray, reference, level: float, eps: float) -> UpperLevelSetApprox:
    """Members of ``reference`` with ``density >= level`` and their components."""
    ref = np.asarray(reference, dtype=float)
    index = np.nonzero(np.asarray(density) >= level)[0]
    members = ref[index]
    return UpperLevelSetApprox(float(level), members, index, connected_components_eps(members, eps), float(eps))
