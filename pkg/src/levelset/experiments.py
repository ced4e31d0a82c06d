"""Synthetic scenarios, the closed-form smoothed target density, coverage
studies, and CSV ingestion."""

from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import LevelSetApprox, directed_max_dist, extract_contour_2d, grid_crossings
from .inference import METHODS, BootstrapConfig, Support, confidence_sets
from .kde import KDE, GridSpec, SampleSet
from .rng import stream


@dataclass(frozen=True, eq=False)
class GaussianMixture:
    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).ravel()
        mu = np.atleast_2d(np.asarray(self.means, dtype=float))
        cov = np.asarray(self.covs, dtype=float)
        if cov.ndim == 2:
            cov = np.broadcast_to(cov, (len(w),) + cov.shape).copy()
        k, d = mu.shape
        if w.shape != (k,) or cov.shape != (k, d, d):
            raise ValueError("weights, means and covariances disagree on component count or dimension")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("mixture weights must be nonnegative and sum to 1")
        if not np.allclose(cov, np.swapaxes(cov, 1, 2)):
            raise ValueError("covariances must be symmetric")
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as exc:
            raise ValueError("covariances must be positive definite") from exc
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "covs", cov)
        object.__setattr__(self, "_chol", chol)
        object.__setattr__(self, "_prec", np.linalg.inv(cov))
        logdet = 2 * np.log(np.diagonal(chol, axis1=1, axis2=2)).sum(axis=1)
        object.__setattr__(self, "_coef", w * np.exp(-0.5 * (d * np.log(2 * np.pi) + logdet)))

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def _terms(self, x):
        pts = np.atleast_2d(np.asarray(x, dtype=float))
        diff = pts[:, None, :] - self.means[None, :, :]
        maha = np.einsum("mkd,kde,mke->mk", diff, self._prec, diff)
        return pts, diff, self._coef * np.exp(-0.5 * maha)

    def pdf(self, x) -> np.ndarray:
        _, _, terms = self._terms(x)
        out = terms.sum(axis=1)
        return float(out[0]) if np.ndim(x) == 1 else out

    def gradient(self, x) -> np.ndarray:
        _, diff, terms = self._terms(x)
        out = -np.einsum("mk,kde,mke->md", terms, self._prec, diff)
        return out[0] if np.ndim(x) == 1 else out

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if n < 1:
            raise ValueError("n must be >= 1")
        comp = rng.choice(len(self.weights), size=n, p=self.weights)
        z = rng.standard_normal((n, self.dim))
        return self.means[comp] + np.einsum("nde,ne->nd", self._chol[comp], z)

    def smoothed(self, h: float) -> GaussianMixture:
        """The mixture convolved with an isotropic Gaussian kernel of width ``h``."""
        return GaussianMixture(self.weights, self.means, self.covs + h**2 * np.eye(self.dim))


@dataclass(frozen=True, eq=False)
class SmoothedMixture:
    """Expected Gaussian KDE of a Gaussian mixture: covariances grow by ``h^2 I``."""

    base: GaussianMixture
    bandwidth: float

    def __post_init__(self):
        if self.bandwidth < 0:
            raise ValueError("bandwidth must be nonnegative")
        object.__setattr__(self, "_mix", self.base.smoothed(self.bandwidth))

    @property
    def dim(self) -> int:
        return self.base.dim

    def pdf(self, x):
        return self._mix.pdf(x)

    __call__ = pdf

    def gradient(self, x):
        return self._mix.gradient(x)


def sample_mixture(mix: GaussianMixture, n: int, rng: np.random.Generator) -> SampleSet:
    return SampleSet(mix.sample(n, rng))


def smoothed_density_eval(sm: SmoothedMixture, x):
    return sm.pdf(x)


THREE_GMM = GaussianMixture(
    weights=np.full(3, 1 / 3),
    means=[[0.0, 0.0], [1.0, 0.0], [1.5, 0.5]],
    covs=0.3**2 * np.eye(2),
)

_FLAT_X = [[0.33, 0.0], [0.0, 0.01]]
_FLAT_Y = [[0.01, 0.0], [0.0, 0.33]]
FOUR_MIXTURE = GaussianMixture(
    weights=[1 / 5, 1 / 5, 1 / 5, 1 / 5, 1 / 10, 1 / 10],
    means=[[-0.3, -0.3], [3.0, 3.0], [0.0, 3.0], [0.0, 3.0], [3.0, 0.0], [3.0, 0.0]],
    covs=[[[0.39, -0.28], [-0.28, 0.39]], [[0.36, 0.30], [0.30, 0.36]], _FLAT_X, _FLAT_Y, _FLAT_X, _FLAT_Y],
)

# Two-component fit in (eruption minutes, waiting minutes); qualitative stand-in.
FAITHFUL_LIKE = GaussianMixture(
    weights=[0.356, 0.644],
    means=[[2.037, 54.48], [4.290, 79.97]],
    covs=[[[0.0692, 0.4352], [0.4352, 33.70]], [[0.1700, 0.9406], [0.9406, 36.05]]],
)


@dataclass(frozen=True, eq=False)
class Scenario:
    name: str
    mixture: GaussianMixture
    level: float
    bandwidth: float
    lower: tuple[float, float]
    upper: tuple[float, float]

    @property
    def target(self) -> SmoothedMixture:
        return SmoothedMixture(self.mixture, self.bandwidth)


SCENARIOS = {
    "three-gmm": Scenario("three-gmm", THREE_GMM, 0.3, 0.2, (-1.5, -1.5), (3.0, 2.0)),
    "four-mixture": Scenario("four-mixture", FOUR_MIXTURE, 0.05, 0.2, (-3.0, -3.0), (5.5, 5.5)),
}


def get_scenario(name: str) -> Scenario:
    try:
        return SCENARIOS[name]
    except KeyError:
        raise KeyError(f"unknown scenario {name!r}; presets: {', '.join(SCENARIOS)}") from None


def faithful_like(n: int, rng: np.random.Generator) -> np.ndarray:
    return FAITHFUL_LIKE.sample(n, rng)


def tube_clusters(n: int, rng: np.random.Generator, cluster_sd: float = 0.15, tube_sd: float = 0.05) -> np.ndarray:
    """Five 3-D clusters, four of them chained by thin tubes.

    Only qualitatively similar to published tube-cluster data; the geometry
    here is made up.
    """
    centres = np.array([[0.0, 0, 0], [2, 0, 0], [2, 2, 0], [0, 2, 0], [1, 1, 2.5]])
    n_tube = n // 5
    n_clu = n - n_tube
    lab = rng.integers(0, 5, size=n_clu)
    blobs = centres[lab] + cluster_sd * rng.standard_normal((n_clu, 3))
    seg = rng.integers(0, 3, size=n_tube)
    t = rng.uniform(0, 1, size=(n_tube, 1))
    tube = centres[seg] + t * (centres[seg + 1] - centres[seg]) + tube_sd * rng.standard_normal((n_tube, 3))
    return np.concatenate([blobs, tube])


def with_noise_axes(points: np.ndarray, extra: int, rng: np.random.Generator, sd: float = 0.1) -> np.ndarray:
    """Append ``extra`` independent Gaussian noise coordinates."""
    return np.concatenate([points, sd * rng.standard_normal((len(points), extra))], axis=1)


def noisy_tube(n: int, dim: int, rng: np.random.Generator, sd: float = 0.1) -> np.ndarray:
    if dim < 3:
        raise ValueError("noisy_tube needs dim >= 3")
    return with_noise_axes(tube_clusters(n, rng), dim - 3, rng, sd)


def newton_on_edges(f, grad, level: float, steps: int = 8, tol: float = 1e-13):
    """Refiner for ``extract_contour_2d``: Newton iterations along each vertex's edge.

    A single step is not enough where the curve runs nearly parallel to an
    edge, so iteration continues until ``|f - level| <= tol`` or ``steps`` runs out.
    """

    def refine(points: np.ndarray, axis: np.ndarray) -> np.ndarray:
        out = points.copy()
        rows = np.arange(len(points))
        for _ in range(steps):
            r = f(out) - level
            if np.all(np.abs(r) <= tol):
                break
            g = grad(out)[rows, axis]
            out[rows, axis] -= r / np.where(g == 0, np.inf, g)
        return out

    return refine


def true_levelset(sm: SmoothedMixture, level: float, grid: GridSpec | None = None, box=None) -> LevelSetApprox:
    """Level set of the smoothed target on a fine grid (default 512 x 512).

    Each vertex is polished by Newton iterations along its grid edge.
    """
    if sm.dim != 2:
        raise ValueError("true_levelset needs a 2-D mixture")
    if grid is None:
        if box is None:
            spread = 4 * np.sqrt(np.max(np.diagonal(sm.base.covs, axis1=1, axis2=2))) + 3 * sm.bandwidth
            box = (sm.base.means.min(0) - spread, sm.base.means.max(0) + spread)
        grid = GridSpec(tuple(box[0]), tuple(box[1]), 512)
    values = sm.pdf(grid.nodes()).reshape(grid.shape)
    out = extract_contour_2d(values, grid, level, refine=newton_on_edges(sm.pdf, sm.gradient, level))
    if out.empty:
        raise ValueError(f"level {level} does not meet the smoothed density on this grid")
    return out.measured(sm.pdf)


@dataclass
class CoverageReport:
    scenario: str
    n: int
    method: str
    alphas: tuple[float, ...]
    trials: int
    replicates: int
    seed: int
    hits: list[int]
    flagged: int = 0
    grid_resolution: int = 128
    diagnostics: dict = field(default_factory=dict)
    wall_time: float = field(default=0.0, compare=False)

    @property
    def coverage(self) -> list[float]:
        return [h / self.trials for h in self.hits]

    def to_dict(self) -> dict:
        # wall time is left out so that reports are byte-reproducible
        return {
            "scenario": self.scenario,
            "n": self.n,
            "method": self.method,
            "alphas": list(self.alphas),
            "trials": self.trials,
            "B": self.replicates,
            "seed": self.seed,
            "hits": list(self.hits),
            "coverage": self.coverage,
            "flagged_trials": self.flagged,
            "grid_resolution": self.grid_resolution,
            "diagnostics": self.diagnostics,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


_METHOD_TITLES = {"hausdorff": "Hausdorff Loss", "sup": "L_inf Loss", "scaled": "Scaled L_inf Loss"}


def format_table(reports: list[CoverageReport]) -> str:
    """Aligned text table: one row per sample size, one column per method and
    confidence level ``1 - alpha``."""
    methods = [m for m in METHODS if any(r.method == m for r in reports)]
    levels = sorted({1 - a for r in reports for a in r.alphas})
    sizes = sorted({r.n for r in reports})
    cell = {(r.n, r.method, round(1 - a, 10)): c for r in reports for a, c in zip(r.alphas, r.coverage)}
    head1 = ["Sample Size"] + [_METHOD_TITLES[m] for m in methods for _ in levels]
    head2 = [""] + [f"1-alpha={lv:.2f}" for _ in methods for lv in levels]
    rows = [[f"n={n}"] + [
        f"{cell[(n, m, round(lv, 10))]:.3f}" if (n, m, round(lv, 10)) in cell else "-"
        for m in methods for lv in levels
    ] for n in sizes]
    table = [head1, head2] + rows
    widths = [max(len(r[i]) for r in table) for i in range(len(head1))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in table]
    lines.insert(2, "-" * len(lines[0]))
    return "\n".join(lines) + "\n"


_TALLIED = ("empty_replicates", "inclusion_violations", "center_outside_band")


def _tally(sets) -> dict:
    # replicate-level counts are shared by all alphas; band checks are per alpha
    out = {}
    for key in _TALLIED:
        vals = [cs.diagnostics[key] for cs in sets if key in cs.diagnostics]
        if vals:
            out[key] = int(sum(vals)) if key == "center_outside_band" else int(vals[0])
    return out


def _trial(args) -> tuple[list[bool], bool, dict]:
    scenario, truth, n, method, alphas, B, seed, t, resolution = args
    data = scenario.mixture.sample(n, stream(seed, "trial-data", t))
    model = KDE(data, scenario.bandwidth)
    grid = GridSpec.around(data, 3 * scenario.bandwidth, resolution)
    boot_seed = int(stream(seed, "trial-boot", t).integers(2**63))
    boot = BootstrapConfig(B, boot_seed, alphas)
    support = Support(model, grid)
    if len(grid_crossings(support.base, grid, scenario.level)) == 0:
        return [False] * len(boot.alphas), True, {}
    sets = confidence_sets(model, scenario.level, method, boot, support)
    if method == "hausdorff":
        gap = directed_max_dist(truth, sets[0].center)
        return [gap <= cs.radius for cs in sets], False, _tally(sets)
    dens = model.evaluate(truth)
    hits = [bool(np.all(np.abs(dens - scenario.level) <= cs.band(dens))) for cs in sets]
    return hits, False, _tally(sets)


def run_coverage(
    scenario: str | Scenario,
    n: int,
    method: str,
    alphas=(0.10, 0.05),
    trials: int = 200,
    B: int = 300,
    seed: int = 0,
    resolution: int = 128,
    truth_resolution: int = 512,
    workers: int = 1,
) -> CoverageReport:
    """Fraction of simulated data sets whose confidence set covers the true
    smoothed level set, for each ``alpha``.

    A trial hits when every vertex of the discretized true level set lies in
    the confidence set. Trials whose estimated level set is empty are misses
    and are counted in ``flagged``. ``diagnostics`` sums the per-trial
    confidence-set checks (inclusion violations, estimate vertices outside
    the band, empty replicates).
    """
    sc = get_scenario(scenario) if isinstance(scenario, str) else scenario
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {METHODS}")
    alphas = BootstrapConfig(1, 0, alphas).alphas
    t0 = time.perf_counter()
    truth = true_levelset(sc.target, sc.level, GridSpec(sc.lower, sc.upper, truth_resolution)).points
    jobs = [(sc, truth, n, method, alphas, B, seed, t, resolution) for t in range(trials)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_trial, jobs))
    else:
        results = [_trial(j) for j in jobs]
    hits = [int(sum(r[0][i] for r in results)) for i in range(len(alphas))]
    return CoverageReport(
        scenario=sc.name,
        n=n,
        method=method,
        alphas=alphas,
        trials=trials,
        replicates=B,
        seed=seed,
        hits=hits,
        flagged=int(sum(r[1] for r in results)),
        diagnostics={k: int(sum(r[2].get(k, 0) for r in results)) for k in sorted({k for r in results for k in r[2]})},
        grid_resolution=resolution,
        wall_time=time.perf_counter() - t0,
    )


def _is_number(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True


def load_csv(path, scale: str = "none", delimiter: str = ",") -> SampleSet:
    """Read one observation per row; a non-numeric first row is taken as a header.

    ``scale="standardize"`` centres each column and divides by its sample
    standard deviation; the shift and scale are kept in ``meta``.
    """
    if scale not in ("none", "standardize"):
        raise ValueError(f"unknown scale {scale!r}")
    path = Path(path)
    with path.open(newline="") as fh:
        rows = [(i, r) for i, r in enumerate(csv.reader(fh, delimiter=delimiter), start=1) if any(c.strip() for c in r)]
    if not rows:
        raise ValueError(f"{path}: no data rows")
    columns = None
    if not all(_is_number(c) for c in rows[0][1]):
        columns = tuple(c.strip() for c in rows[0][1])
        rows = rows[1:]
    if not rows:
        raise ValueError(f"{path}: no numeric rows after the header")
    width = len(columns) if columns else len(rows[0][1])
    values = []
    for lineno, row in rows:
        if len(row) != width:
            raise ValueError(f"{path}: row {lineno} has {len(row)} fields, expected {width}")
        try:
            values.append([float(c) for c in row])
        except ValueError:
            raise ValueError(f"{path}: row {lineno} has a non-numeric cell") from None
    pts = np.array(values, dtype=float)
    meta = {"source": str(path), "scale": scale}
    if scale == "standardize":
        if len(pts) < 2:
            raise ValueError("standardizing needs at least two rows")
        centre = pts.mean(axis=0)
        sd = pts.std(axis=0, ddof=1)
        if np.any(sd == 0):
            raise ValueError("cannot standardize a constant column")
        pts = (pts - centre) / sd
        meta.update(center=centre.tolist(), sd=sd.tolist())
    return SampleSet(pts, columns, meta)
