"""Gaussian kernel density estimation on points and rectangular grids."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

KERNELS = ("gaussian",)

# floats allowed in one intermediate buffer (256 MB of float64)
DEFAULT_MEMORY_BUDGET = 2**25


class GridTooLarge(ValueError):
    """Raised when a grid evaluation would exceed the memory budget."""


@dataclass(frozen=True)
class SampleSet:
    """An ``(n, d)`` block of observations plus free-form metadata."""

    points: np.ndarray
    columns: tuple[str, ...] | None = None
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "points", as_points(self.points))

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


def as_points(data, dim: int | None = None) -> np.ndarray:
    """Coerce ``data`` to a finite float array of shape ``(n, d)``.

    A 1-D input is read as ``n`` scalar observations unless ``dim`` says the
    input is a single point of that dimension.
    """
    if isinstance(data, SampleSet):
        return data.points
    pts = np.asarray(data, dtype=float)
    if pts.ndim == 0:
        pts = pts.reshape(1, 1)
    elif pts.ndim == 1:
        pts = pts.reshape(1, -1) if dim is not None and pts.size == dim else pts.reshape(-1, 1)
    if pts.ndim != 2:
        raise ValueError(f"expected a 2-D array of points, got shape {pts.shape}")
    if pts.shape[0] < 1:
        raise ValueError("need at least one point")
    if dim is not None and pts.shape[1] != dim:
        raise ValueError(f"dimension mismatch: expected {dim}, got {pts.shape[1]}")
    if not np.all(np.isfinite(pts)):
        raise ValueError("points must be finite")
    return pts


@dataclass(frozen=True)
class GridSpec:
    """Axis-aligned rectangular grid with ``resolution[i]`` nodes on axis ``i``.

    Node values are laid out with ``indexing="ij"``: ``values[i, j]`` belongs to
    the node ``(axes[0][i], axes[1][j])``, and ``values.ravel()`` is row-major
    (C order) over those indices.
    """

    lower: tuple[float, ...]
    upper: tuple[float, ...]
    resolution: tuple[int, ...]

    def __post_init__(self):
        lower = tuple(float(v) for v in np.atleast_1d(self.lower))
        upper = tuple(float(v) for v in np.atleast_1d(self.upper))
        res = np.atleast_1d(self.resolution)
        if res.size == 1 and len(lower) > 1:
            res = np.repeat(res, len(lower))
        resolution = tuple(int(r) for r in res)
        if not (len(lower) == len(upper) == len(resolution)):
            raise ValueError("lower, upper and resolution must have equal length")
        if not all(np.isfinite(lower + upper)):
            raise ValueError("grid bounds must be finite")
        if any(lo >= hi for lo, hi in zip(lower, upper)):
            raise ValueError("grid requires lower < upper on every axis")
        if any(r < 2 for r in resolution):
            raise ValueError("grid resolution must be >= 2 on every axis")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "resolution", resolution)

    @classmethod
    def around(cls, points, pad: float, resolution=128) -> GridSpec:
        """Bounding box of ``points`` padded by ``pad`` on every side."""
        pts = as_points(points)
        return cls(tuple(pts.min(0) - pad), tuple(pts.max(0) + pad), resolution)

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.resolution

    @property
    def size(self) -> int:
        return int(np.prod(self.resolution))

    @property
    def spacing(self) -> np.ndarray:
        return (np.array(self.upper) - np.array(self.lower)) / (np.array(self.resolution) - 1)

    def axes(self) -> list[np.ndarray]:
        return [np.linspace(lo, hi, r) for lo, hi, r in zip(self.lower, self.upper, self.resolution)]

    def nodes(self) -> np.ndarray:
        """All nodes as an ``(size, d)`` array in row-major order."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def to_dict(self) -> dict:
        return {"lower": list(self.lower), "upper": list(self.upper), "resolution": list(self.resolution)}


def silverman_bandwidth(data) -> float:
    """Normal-reference bandwidth ``sigma * (4 / ((d + 2) n)) ** (1 / (d + 4))``.

    ``sigma`` is the mean of the per-axis sample standard deviations.
    """
    pts = as_points(data)
    n, d = pts.shape
    if n < 2:
        raise ValueError("Silverman's rule needs at least two observations")
    sd = pts.std(axis=0, ddof=1)
    if not np.any(sd > 0):
        raise ValueError("degenerate data: zero variance on every axis")
    return float(sd.mean() * (4.0 / ((d + 2) * n)) ** (1.0 / (d + 4)))


@dataclass(frozen=True, eq=False)
class KDE:
    """Kernel density estimator with a fixed bandwidth.

    Instances are immutable; every evaluation method is a pure function of the
    stored data, so they can be shared freely across threads.
    """

    data: np.ndarray
    bandwidth: float
    kernel: str = "gaussian"
    memory_budget: int = DEFAULT_MEMORY_BUDGET

    def __post_init__(self):
        object.__setattr__(self, "data", as_points(self.data))
        h = float(self.bandwidth)
        if not (np.isfinite(h) and h > 0):
            raise ValueError(f"bandwidth must be positive, got {self.bandwidth!r}")
        object.__setattr__(self, "bandwidth", h)
        if self.kernel not in KERNELS:
            raise ValueError(f"unknown kernel {self.kernel!r}; available: {KERNELS}")

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    @property
    def norm(self) -> float:
        """Constant in front of the kernel sum: ``1 / (n h^d (2 pi)^(d/2))``."""
        d = self.dim
        return 1.0 / (self.n * self.bandwidth**d * (2 * np.pi) ** (d / 2))

    def with_data(self, data) -> KDE:
        return KDE(data, self.bandwidth, self.kernel, self.memory_budget)

    def _chunks(self, m: int):
        step = max(1, self.memory_budget // max(1, self.n * self.dim))
        for start in range(0, m, step):
            yield slice(start, min(m, start + step))

    def _query(self, x) -> tuple[np.ndarray, bool]:
        arr = np.asarray(x, dtype=float)
        single = arr.ndim == 1
        pts = as_points(arr.reshape(1, -1) if single else arr, dim=self.dim)
        return pts, single

    def evaluate(self, x) -> np.ndarray | float:
        """Density at one point ``(d,)`` or at many points ``(m, d)``."""
        pts, single = self._query(x)
        out = np.empty(pts.shape[0])
        inv = 1.0 / (2.0 * self.bandwidth**2)
        for sl in self._chunks(pts.shape[0]):
            diff = pts[sl, None, :] - self.data[None, :, :]
            sq = np.einsum("mnd,mnd->mn", diff, diff)
            out[sl] = np.exp(-sq * inv).sum(axis=1)
        out *= self.norm
        return float(out[0]) if single else out

    __call__ = evaluate

    def gradient(self, x) -> np.ndarray:
        """Analytic gradient; shape ``(d,)`` for one point, ``(m, d)`` for many."""
        pts, single = self._query(x)
        out = np.empty_like(pts)
        h2 = self.bandwidth**2
        for sl in self._chunks(pts.shape[0]):
            diff = pts[sl, None, :] - self.data[None, :, :]
            w = np.exp(-np.einsum("mnd,mnd->mn", diff, diff) / (2.0 * h2))
            out[sl] = -np.einsum("mn,mnd->md", w, diff) / h2
        out *= self.norm
        return out[0] if single else out

    def axis_factors(self, grid: GridSpec) -> list[np.ndarray]:
        """Per-axis kernel factors ``exp(-(g - X_ik)^2 / 2h^2)``, each ``(n, r_k)``.

        The Gaussian kernel is a product over axes, so a grid evaluation is a
        contraction of these factors over the sample index.
        """
        if grid.dim != self.dim:
            raise ValueError(f"grid dimension {grid.dim} does not match data dimension {self.dim}")
        inv = 1.0 / (2.0 * self.bandwidth**2)
        return [np.exp(-((ax[None, :] - self.data[:, k : k + 1]) ** 2) * inv) for k, ax in enumerate(grid.axes())]

    def evaluate_grid(self, grid: GridSpec, weights: np.ndarray | None = None) -> np.ndarray:
        """Density at every grid node, returned with shape ``grid.shape``.

        ``weights`` (length ``n``, default all ones) multiplies each sample's
        kernel; passing bootstrap counts gives the density of a resample.
        """
        need = max(grid.size, self.n * int(np.prod(grid.resolution[:-1])))
        if need > self.memory_budget:
            raise GridTooLarge(f"grid evaluation needs {need} floats, budget is {self.memory_budget}")
        return contract_factors(self.axis_factors(grid), weights) * self.norm


def contract_factors(factors: list[np.ndarray], weights: np.ndarray | None = None) -> np.ndarray:
    """Sum over samples of the outer product of per-axis factors."""
    first = factors[0] if weights is None else factors[0] * np.asarray(weights, dtype=float)[:, None]
    if len(factors) == 1:
        return first.sum(axis=0)
    n = first.shape[0]
    acc = first
    for f in factors[1:-1]:
        acc = (acc[:, :, None] * f[:, None, :]).reshape(n, -1)
    out = acc.T @ factors[-1]
    return out.reshape(tuple(f.shape[1] for f in factors))


def kde_eval(model: KDE, x) -> float | np.ndarray:
    return model.evaluate(x)


def kde_gradient(model: KDE, x) -> np.ndarray:
    return model.gradient(x)


def kde_eval_grid(model: KDE, grid: GridSpec) -> np.ndarray:
    return model.evaluate_grid(grid)
