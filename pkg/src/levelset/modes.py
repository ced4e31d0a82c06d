"""Mean-shift mode clustering and adjacency of basins above a level."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .geometry import UpperLevelSetApprox, connected_components_eps
from .kde import KDE, as_points

STEP_TOL = 1e-7
MAX_ITER = 500


@dataclass(frozen=True, eq=False)
class AscentResult:
    """Endpoints of mean-shift runs started from ``m`` points.

    ``densities`` is filled only when the runs were tracked; row ``i`` holds
    the estimated density at each iterate of run ``i`` (NaN-padded).
    """

    endpoints: np.ndarray
    iterations: np.ndarray
    converged: np.ndarray
    densities: np.ndarray | None = None


@dataclass(frozen=True, eq=False)
class ModeSet:
    modes: np.ndarray
    density: np.ndarray
    merge_radius: float
    step_tol: float = STEP_TOL

    def __len__(self) -> int:
        return self.modes.shape[0]

    def to_dict(self) -> dict:
        return {
            "modes": self.modes.tolist(),
            "density": self.density.tolist(),
            "merge_radius": self.merge_radius,
            "step_tol": self.step_tol,
        }


@dataclass(frozen=True, eq=False)
class BasinAssignment:
    labels: np.ndarray
    iterations: np.ndarray
    converged: np.ndarray

    def to_dict(self) -> dict:
        return {
            "labels": self.labels.tolist(),
            "iterations": self.iterations.tolist(),
            "converged": self.converged.tolist(),
        }


def mean_shift(
    model: KDE,
    starts,
    tol: float = STEP_TOL,
    max_iter: int = MAX_ITER,
    track: bool = False,
) -> AscentResult:
    """Gaussian mean shift from every start at once.

    Each iterate moves to the kernel-weighted mean of the data. A run stops
    when its step is shorter than ``tol``; runs still moving after
    ``max_iter`` steps are reported as not converged.
    """
    x = as_points(starts, dim=model.dim).copy()
    m = x.shape[0]
    X = model.data
    inv = 1.0 / (2.0 * model.bandwidth**2)
    active = np.ones(m, dtype=bool)
    iters = np.zeros(m, dtype=np.int64)
    conv = np.zeros(m, dtype=bool)
    trace = np.full((m, max_iter + 1), np.nan) if track else None
    step_rows = max(1, 2**22 // max(1, model.n * model.dim))

    for it in range(max_iter + 1):
        idx = np.nonzero(active)[0]
        if idx.size == 0:
            break
        for s in range(0, idx.size, step_rows):
            rows = idx[s : s + step_rows]
            diff = x[rows, None, :] - X[None, :, :]
            sq = np.einsum("mnd,mnd->mn", diff, diff) * inv
            if track:
                trace[rows, it] = np.exp(-sq).sum(axis=1) * model.norm
            if it == max_iter:
                continue
            # shift exponents so the closest sample has weight 1; the ratio is unchanged
            w = np.exp(-(sq - sq.min(axis=1, keepdims=True)))
            new = (w @ X) / w.sum(axis=1, keepdims=True)
            step = np.linalg.norm(new - x[rows], axis=1)
            x[rows] = new
            iters[rows] += 1
            done = step < tol
            conv[rows[done]] = True
            active[rows[done]] = False
            if track:
                # record the density at the final iterate of finished runs
                fin = rows[done]
                if fin.size:
                    d2 = np.einsum("mnd,mnd->mn", x[fin, None, :] - X, x[fin, None, :] - X) * inv
                    trace[fin, it + 1] = np.exp(-d2).sum(axis=1) * model.norm

    return AscentResult(x, iters, conv, trace)


def mean_shift_ascent(model: KDE, start, tol: float = STEP_TOL, max_iter: int = MAX_ITER, track: bool = True):
    """Single-start ascent; returns ``(endpoint, summary)``.

    The summary carries the iteration count, the convergence flag and, when
    tracked, the density at every iterate.
    """
    res = mean_shift(model, np.asarray(start, dtype=float).reshape(1, -1), tol, max_iter, track)
    summary = {"iterations": int(res.iterations[0]), "converged": bool(res.converged[0])}
    if track:
        dens = res.densities[0]
        summary["densities"] = dens[~np.isnan(dens)]
    return res.endpoints[0], summary


def gradient_scale(model: KDE) -> float:
    """Natural size of a density gradient for this model: ``max_i p(X_i) / h``."""
    return float(model.evaluate(model.data).max() / model.bandwidth)


def find_modes(
    model: KDE,
    starts=None,
    merge_radius: float | None = None,
    tol: float = STEP_TOL,
    max_iter: int = MAX_ITER,
) -> tuple[ModeSet, BasinAssignment]:
    """Modes of the estimator and the basin of every start (default: the data).

    Converged endpoints within ``merge_radius`` (default ``h / 4``) are merged
    by single linkage; each merged group is represented by its highest-density
    endpoint. Modes are ordered by decreasing density. Runs that did not
    converge are assigned to the nearest mode and keep ``converged=False``.
    """
    starts = model.data if starts is None else as_points(starts, dim=model.dim)
    if merge_radius is None:
        merge_radius = model.bandwidth / 4
    res = mean_shift(model, starts, tol, max_iter)
    ends = res.endpoints
    pool = np.nonzero(res.converged)[0]
    if pool.size == 0:
        pool = np.arange(len(ends))
    groups = connected_components_eps(ends[pool], merge_radius)
    dens = model.evaluate(ends[pool])

    reps = []
    for g in range(groups.max() + 1):
        members = np.nonzero(groups == g)[0]
        best = members[np.argmax(dens[members])]
        reps.append(best)
    reps = np.array(reps)
    # canonical order: density descending, then coordinates
    keys = [tuple(ends[pool[r]]) for r in reps]
    order = sorted(range(len(reps)), key=lambda i: (-dens[reps[i]], keys[i]))
    modes = ends[pool[reps[order]]]
    mode_density = dens[reps[order]]

    rank = np.empty(len(reps), dtype=np.int64)
    rank[order] = np.arange(len(reps))
    labels = np.empty(len(ends), dtype=np.int64)
    labels[pool] = rank[groups]
    rest = np.setdiff1d(np.arange(len(ends)), pool)
    if rest.size:
        _, nearest = cKDTree(modes).query(ends[rest])
        labels[rest] = nearest

    return (
        ModeSet(modes, mode_density, float(merge_radius), tol),
        BasinAssignment(labels, res.iterations, res.converged),
    )


def basin_adjacency(
    assignment: BasinAssignment,
    highpoints: UpperLevelSetApprox,
    eps: float,
) -> list[tuple[int, int]]:
    """Pairs of modes whose basins touch inside the upper level set.

    Two basins are adjacent when some converged high-density member of one lies
    within ``eps`` of a converged high-density member of the other; such a
    pair is necessarily inside one epsilon-connected component. ``highpoints``
    must index the same points as ``assignment``.
    """
    idx = highpoints.index
    ok = assignment.converged[idx]
    pts = highpoints.points[ok]
    lab = assignment.labels[idx][ok]
    comp = highpoints.labels[ok]
    if len(pts) < 2:
        return []
    pairs = cKDTree(pts).query_pairs(r=eps, output_type="ndarray")
    if len(pairs) == 0:
        return []
    a, b = lab[pairs[:, 0]], lab[pairs[:, 1]]
    cross = (a != b) & (comp[pairs[:, 0]] == comp[pairs[:, 1]])
    edges = {(int(min(u, v)), int(max(u, v))) for u, v in zip(a[cross], b[cross])}
    return sorted(edges)
