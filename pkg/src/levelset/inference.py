"""Bootstrap confidence sets for density level sets and the simultaneous
pointwise tests they induce.

Three losses are supported:

``hausdorff``
    ``W* = Haus(D*, D)`` between the level set of a resampled KDE and that of
    the original; the confidence set is ``D`` dilated by the ``1 - alpha``
    quantile of ``W*``.
``sup``
    ``M* = sup |p* - p|`` over the evaluation set; the confidence set is the
    band ``|p(x) - level| <= m``.
``scaled``
    ``V* = sup |p* - p| / sqrt(p)``; the band half-width becomes
    ``v * sqrt(p(x))``.

Every replicate refits the estimator on a resample with the original
bandwidth.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .geometry import grid_crossings, hausdorff
from .kde import KDE, GridSpec, GridTooLarge, as_points, contract_factors
from .rng import stream

METHODS = ("hausdorff", "sup", "scaled")


class EmptyLevelSet(ValueError):
    """The estimated level set has no points on the support."""


@dataclass(frozen=True)
class BootstrapConfig:
    replicates: int = 1000
    seed: int = 0
    alphas: tuple[float, ...] = (0.10,)

    def __post_init__(self):
        if int(self.replicates) < 1:
            raise ValueError("replicates must be >= 1")
        alphas = tuple(sorted(float(a) for a in np.atleast_1d(self.alphas)))
        if not alphas or any(not 0.0 < a < 1.0 for a in alphas):
            raise ValueError("every alpha must lie strictly between 0 and 1")
        object.__setattr__(self, "replicates", int(self.replicates))
        object.__setattr__(self, "seed", int(self.seed))
        object.__setattr__(self, "alphas", alphas)


@dataclass(frozen=True, eq=False)
class ConfidenceSet:
    """A bootstrap confidence set for the level set of ``model`` at ``level``.

    ``threshold`` is a dilation radius for the Hausdorff method and a band
    half-width (in density units, or density per root density for
    ``scaled``) otherwise.
    """

    method: str
    alpha: float
    level: float
    threshold: float
    bandwidth: float
    replicates: int
    seed: int
    diagnostics: dict = field(default_factory=dict)
    support: dict = field(default_factory=dict)
    model: KDE | None = field(default=None, repr=False)
    center: np.ndarray | None = field(default=None, repr=False)
    losses: np.ndarray | None = field(default=None, repr=False)

    @property
    def radius(self) -> float:
        if self.method != "hausdorff":
            raise AttributeError("only Hausdorff confidence sets have a radius")
        return self.threshold

    @property
    def half_width(self) -> float:
        if self.method == "hausdorff":
            raise AttributeError("Hausdorff confidence sets have a radius, not a half-width")
        return self.threshold

    def contains(self, x) -> np.ndarray:
        """Membership of each row of ``x`` in the confidence set."""
        if self.model is None:
            raise ValueError("membership needs the fitted model")
        pts = as_points(np.atleast_2d(x) if np.ndim(x) == 1 else x, dim=self.model.dim)
        if self.method == "hausdorff":
            if self.center is None or len(self.center) == 0:
                return np.zeros(len(pts), dtype=bool)
            if np.isinf(self.threshold):
                return np.ones(len(pts), dtype=bool)
            dist, _ = cKDTree(self.center).query(pts)
            return dist <= self.threshold
        dens = self.model.evaluate(pts)
        return np.abs(dens - self.level) <= self.band(dens)

    def band(self, density: np.ndarray) -> np.ndarray:
        """Half-width of the band at points with the given estimated density."""
        if self.method == "sup":
            return np.full_like(np.asarray(density, dtype=float), self.threshold)
        if self.method == "scaled":
            return self.threshold * np.sqrt(np.maximum(density, 0.0))
        raise ValueError("Hausdorff confidence sets are dilations, not bands")

    def to_dict(self) -> dict:
        key = "radius" if self.method == "hausdorff" else "half_width"
        return {
            "method": self.method,
            "alpha": self.alpha,
            "lambda": self.level,
            key: self.threshold,
            "bandwidth": self.bandwidth,
            "B": self.replicates,
            "seed": self.seed,
            "support": self.support,
            "diagnostics": self.diagnostics,
        }


def bootstrap_indices(n: int, rng: np.random.Generator) -> np.ndarray:
    return rng.integers(0, n, size=n)


def bootstrap_resample(data, rng: np.random.Generator) -> np.ndarray:
    """``n`` draws with replacement from the rows of ``data``."""
    pts = as_points(data)
    return pts[bootstrap_indices(len(pts), rng)]


def replicate_rng(seed: int, index: int, label: str = "bootstrap") -> np.random.Generator:
    return stream(seed, label, index)


def empirical_quantile(values, q: float) -> float:
    """The ``ceil(q * B)``-th smallest of ``B`` values (1-indexed).

    ``q * B`` is rounded to 9 decimals before the ceiling so that products
    such as ``0.95 * 100`` are not pushed up an order statistic by roundoff.
    """
    v = np.sort(np.asarray(values, dtype=float).ravel())
    if v.size == 0:
        raise ValueError("empirical_quantile of an empty sample")
    if not 0.0 < q < 1.0 and q != 1.0:
        raise ValueError("q must lie in (0, 1]")
    k = int(np.ceil(round(q * v.size, 9)))
    return float(v[min(max(k, 1), v.size) - 1])


class Support:
    """Where densities are evaluated: a grid, or an explicit point set.

    The per-sample kernel terms are precomputed once, so the density of any
    resample with the same bandwidth is a weighted contraction of them.
    """

    def __init__(self, model: KDE, where, levelset_tol: float | None = None):
        self.model = model
        self.levelset_tol = levelset_tol
        if isinstance(where, GridSpec):
            self.grid = where
            self.points = None
            need = max(where.size, model.n * int(np.prod(where.resolution[:-1])))
            if need > model.memory_budget:
                raise GridTooLarge(f"grid support needs {need} floats, budget is {model.memory_budget}")
            self._factors = model.axis_factors(where)
        else:
            self.grid = None
            self.points = as_points(where, dim=model.dim)
            if self.points.shape[0] * model.n > model.memory_budget:
                raise GridTooLarge("kernel matrix for the point support exceeds the memory budget")
            self._kmat = self._kernel_matrix(self.points)
        self.base = self.density()

    def _kernel_matrix(self, pts: np.ndarray) -> np.ndarray:
        inv = 1.0 / (2.0 * self.model.bandwidth**2)
        out = np.empty((pts.shape[0], self.model.n))
        step = max(1, 2**22 // max(1, self.model.n * self.model.dim))
        for s in range(0, pts.shape[0], step):
            diff = pts[s : s + step, None, :] - self.model.data[None, :, :]
            out[s : s + step] = np.exp(-np.einsum("mnd,mnd->mn", diff, diff) * inv)
        return out

    def density(self, counts: np.ndarray | None = None) -> np.ndarray:
        """Density of the model, or of the resample with these per-sample counts."""
        if self.grid is not None:
            return contract_factors(self._factors, counts) * self.model.norm
        if counts is None:
            return self._kmat.sum(axis=1) * self.model.norm
        return (self._kmat @ counts) * self.model.norm

    def levelset(self, values: np.ndarray, level: float) -> np.ndarray:
        if self.grid is not None:
            return grid_crossings(values, self.grid, level)
        if self.levelset_tol is None:
            raise ValueError("a point support needs levelset_tol to extract level sets")
        return self.points[np.abs(values - level) <= self.levelset_tol]

    def describe(self) -> dict:
        if self.grid is not None:
            return {"kind": "grid", **self.grid.to_dict()}
        out = {"kind": "points", "count": int(self.points.shape[0])}
        if self.levelset_tol is not None:
            out["levelset_tol"] = self.levelset_tol
        return out


def coarse_grid_resolution(dim: int, max_nodes: int = 4096) -> int:
    return max(2, int(np.floor(max_nodes ** (1.0 / dim) + 1e-9)))


def default_support(model: KDE, resolution: int = 128, pad: float = 3.0):
    """Grid over the padded data box for ``d <= 2``; otherwise the data points
    together with a coarse grid over the same box."""
    h = model.bandwidth
    if model.dim <= 2:
        return GridSpec.around(model.data, pad * h, resolution)
    coarse = GridSpec.around(model.data, pad * h, coarse_grid_resolution(model.dim))
    return np.concatenate([model.data, coarse.nodes()])


def _as_support(model: KDE, where, levelset_tol=None) -> Support:
    if isinstance(where, Support):
        return where
    if where is None:
        where = default_support(model)
    return Support(model, where, levelset_tol)


def _counts(n: int, rng: np.random.Generator) -> np.ndarray:
    return np.bincount(bootstrap_indices(n, rng), minlength=n).astype(float)


def _sets(method, model, level, boot, losses, support, diagnostics, center=None) -> list[ConfidenceSet]:
    return [
        ConfidenceSet(
            method=method,
            alpha=a,
            level=float(level),
            threshold=empirical_quantile(losses, 1.0 - a),
            bandwidth=model.bandwidth,
            replicates=boot.replicates,
            seed=boot.seed,
            diagnostics=dict(diagnostics),
            support=support.describe(),
            model=model,
            center=center,
            losses=losses,
        )
        for a in boot.alphas
    ]


def method1_hausdorff_ci(
    model: KDE,
    level: float,
    boot: BootstrapConfig,
    where=None,
    levelset_tol: float | None = None,
) -> list[ConfidenceSet]:
    """Hausdorff-loss confidence sets, one per ``boot.alphas`` entry.

    A replicate whose level set vanishes contributes ``W* = inf``.
    """
    if where is None:
        where = default_support(model)
    if levelset_tol is None and not isinstance(where, (GridSpec, Support)):
        levelset_tol = 0.05 * level
    support = _as_support(model, where, levelset_tol)
    center = support.levelset(support.base, level)
    if len(center) == 0:
        raise EmptyLevelSet(f"estimated level set at {level} is empty on the support")
    center_tree = cKDTree(center)

    losses = np.empty(boot.replicates)
    empty = violations = 0
    for b in range(boot.replicates):
        counts = _counts(model.n, replicate_rng(boot.seed, b))
        star = support.levelset(support.density(counts), level)
        if len(star) == 0:
            losses[b] = np.inf
            empty += 1
            continue
        w = hausdorff(star, center)
        losses[b] = w
        # both inclusions star in center + w and center in star + w, via a second route
        reach = w * (1 + 1e-12) + 1e-300
        far = np.isinf(center_tree.query(star, distance_upper_bound=reach)[0]).any()
        far |= np.isinf(cKDTree(star).query(center, distance_upper_bound=reach)[0]).any()
        violations += int(far)

    diagnostics = {"empty_replicates": empty, "inclusion_violations": violations}
    return _sets("hausdorff", model, level, boot, losses, support, diagnostics, center=center)


def _center_check(support: Support, level: float, sets: list[ConfidenceSet]) -> None:
    """Count estimated level-set vertices that fall outside each band."""
    if support.grid is None:
        return
    center = support.levelset(support.base, level)
    if len(center) == 0:
        for cs in sets:
            cs.diagnostics.update(center_outside_band=0, center_tolerance=0.0)
        return
    dens = support.model.evaluate(center)
    dev = np.abs(dens - level)
    for cs in sets:
        cs.diagnostics.update(
            center_outside_band=int(np.sum(dev > cs.band(dens))),
            center_tolerance=float(dev.max()),
        )


def method2_sup_ci(model: KDE, level: float, boot: BootstrapConfig, where=None) -> list[ConfidenceSet]:
    """Supremum-loss band ``|p(x) - level| <= m`` for each ``boot.alphas`` entry."""
    support = _as_support(model, where)
    base = support.base
    losses = np.empty(boot.replicates)
    for b in range(boot.replicates):
        counts = _counts(model.n, replicate_rng(boot.seed, b))
        losses[b] = np.max(np.abs(support.density(counts) - base))
    sets = _sets("sup", model, level, boot, losses, support, {"empty_replicates": 0})
    _center_check(support, level, sets)
    return sets


def method2_scaled_ci(
    model: KDE,
    level: float,
    boot: BootstrapConfig,
    where=None,
    floor: float = 1e-6,
) -> list[ConfidenceSet]:
    """Variance-stabilized band ``|p(x) - level| <= v sqrt(p(x))``.

    Evaluation points with ``p < floor * max(p)`` are left out of the
    supremum.
    """
    support = _as_support(model, where)
    base = support.base
    cutoff = floor * float(base.max())
    keep = (base >= cutoff) & (base > 0)
    if not keep.any():
        raise ValueError("every evaluation point is below the density floor")
    root = np.sqrt(base[keep])
    losses = np.empty(boot.replicates)
    for b in range(boot.replicates):
        counts = _counts(model.n, replicate_rng(boot.seed, b))
        losses[b] = np.max(np.abs(support.density(counts)[keep] - base[keep]) / root)
    diag = {"empty_replicates": 0, "floor": floor, "floor_density": cutoff, "excluded_points": int((~keep).sum())}
    sets = _sets("scaled", model, level, boot, losses, support, diag)
    _center_check(support, level, sets)
    return sets


def confidence_sets(model: KDE, level: float, method: str, boot: BootstrapConfig, where=None, **kw) -> list[ConfidenceSet]:
    if method == "hausdorff":
        return method1_hausdorff_ci(model, level, boot, where, **kw)
    if method == "sup":
        return method2_sup_ci(model, level, boot, where)
    if method == "scaled":
        return method2_scaled_ci(model, level, boot, where, **kw)
    raise ValueError(f"unknown method {method!r}; choose from {METHODS}")


REGIONS = ("inside-high", "inside-low", "band")


def pointwise_tests(model: KDE, level: float, confset: ConfidenceSet, x) -> dict:
    """Simultaneous level tests at one point ``(d,)`` or many ``(m, d)``.

    ``T_in = 1`` rejects ``p_h(x) <= level`` (region ``inside-high``),
    ``T_out = 1`` rejects ``p_h(x) >= level`` (region ``inside-low``); points in
    the confidence set reject neither (region ``band``).
    """
    if confset.level != level:
        raise ValueError("confidence set was built at a different level")
    arr = np.asarray(x, dtype=float)
    single = arr.ndim == 1
    pts = as_points(arr.reshape(1, -1) if single else arr, dim=model.dim)
    dens = model.evaluate(pts)
    outside = ~confset.contains(pts)
    t_in = (dens >= level) & outside
    t_out = (dens <= level) & outside
    region = np.where(t_in, "inside-high", np.where(t_out, "inside-low", "band"))
    if single:
        return {"T_in": int(t_in[0]), "T_out": int(t_out[0]), "region": str(region[0])}
    return {"T_in": t_in.astype(int), "T_out": t_out.astype(int), "region": region}
