"""Command-line entry point.

Subcommands: ``levelset``, ``confset``, ``visualize``, ``coverage``.

Settings are layered: built-in defaults, then a ``key=value`` file given with
``--config``, then ``LEVELSET_<FLAG>`` environment variables, then command
line flags. Exit codes: 0 success, 2 empty result, 3 configuration error,
4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import __version__
from .experiments import SCENARIOS, format_table, load_csv, run_coverage
from .geometry import LevelSetApprox, extract_contour_2d, extract_levelset_points, grid_crossings, upper_level_set
from .inference import METHODS, BootstrapConfig, EmptyLevelSet, coarse_grid_resolution, confidence_sets, default_support, pointwise_tests
from .kde import KDE, GridSpec, silverman_bandwidth
from .modes import find_modes, mean_shift_ascent
from .visualization import (
    REGION_COLORS,
    NothingToDraw,
    build_cluster_graph,
    confidence_levels,
    emit_svg,
    render_plane_svg,
)

log = logging.getLogger("levelset")

EXIT_OK, EXIT_EMPTY, EXIT_CONFIG, EXIT_IO = 0, 2, 3, 4
ENV_PREFIX = "LEVELSET_"


class ConfigError(ValueError):
    pass


class EmptyResult(RuntimeError):
    pass


class InputError(RuntimeError):
    pass


@dataclass
class RunConfig:
    subcommand: str = ""
    input: str | None = None
    h: str = "silverman"
    lambda_: str | None = None
    levels: str | None = None
    alphas: str = "0.10"
    method: str = "hausdorff"
    B: int = 1000
    trials: int = 200
    n: int = 500
    seed: int = 0
    grid: int = 128
    eps: str | None = None
    tol: str | None = None
    scale: str = "none"
    delimiter: str = ","
    scenario: str | None = None
    workers: int = 1
    out_json: str | None = None
    out_svg: str | None = None
    out_table: str | None = None

    OUTPUTS = ("out_json", "out_svg", "out_table")

    def echo(self) -> dict:
        """Resolved inputs; output destinations are left out so artifacts do not
        depend on where they are written."""
        d = asdict(self)
        d["lambda"] = d.pop("lambda_")
        for k in self.OUTPUTS:
            d.pop(k)
        return d


_FLAG_NAMES = {f.name: f.name.rstrip("_").replace("_", "-") for f in fields(RunConfig) if f.name != "subcommand"}
_INT_FIELDS = {"B", "trials", "n", "seed", "grid", "workers"}


def _coerce(name: str, value):
    if value is None:
        return None
    if name in _INT_FIELDS:
        try:
            return int(value)
        except (TypeError, ValueError):
            raise ConfigError(f"--{_FLAG_NAMES[name]} expects an integer, got {value!r}") from None
    return str(value)


def read_config_file(path) -> dict:
    out = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    by_flag = {v: k for k, v in _FLAG_NAMES.items()}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.lstrip("-").replace("_", "-")
        if key not in by_flag:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        out[by_flag[key]] = value
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="levelset", description="Density level sets: estimation, bootstrap confidence sets, visualization.")
    parser.add_argument("--version", action="version", version=f"levelset {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    helps = {
        "levelset": "estimate the level set of a KDE",
        "confset": "bootstrap confidence set for the level set",
        "visualize": "tomographic / confidence cluster-graph view",
        "coverage": "coverage study on a simulated scenario",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", help="key=value settings file")
        p.add_argument("--input", help="CSV file, one observation per row")
        p.add_argument("--h", help="bandwidth, or 'silverman'")
        p.add_argument("--lambda", dest="lambda_", help="density level, absolute or qmax:FRACTION")
        p.add_argument("--levels", help="comma-separated levels for the tomographic view")
        p.add_argument("--alphas", help="comma-separated significance levels")
        p.add_argument("--method", help=f"one of {', '.join(METHODS)}")
        p.add_argument("--B", dest="B", help="bootstrap replicates")
        p.add_argument("--trials", help="coverage trials")
        p.add_argument("--n", help="sample size for coverage")
        p.add_argument("--seed", help="64-bit seed")
        p.add_argument("--grid", help="grid nodes per axis")
        p.add_argument("--eps", help="linking distance (default: bandwidth)")
        p.add_argument("--tol", help="level-set tolerance for point clouds (d > 2)")
        p.add_argument("--scale", help="none or standardize")
        p.add_argument("--delimiter", help="CSV delimiter")
        p.add_argument("--scenario", help=f"coverage preset: {', '.join(SCENARIOS)}")
        p.add_argument("--workers", help="processes for coverage trials")
        p.add_argument("--out-json", dest="out_json")
        p.add_argument("--out-svg", dest="out_svg")
        p.add_argument("--out-table", dest="out_table")
    return parser


def resolve_config(args: argparse.Namespace, environ=None) -> RunConfig:
    environ = os.environ if environ is None else environ
    values: dict = {}
    if getattr(args, "config", None):
        values.update(read_config_file(args.config))
    for name, flag in _FLAG_NAMES.items():
        env = environ.get(ENV_PREFIX + flag.replace("-", "_").upper())
        if env is not None:
            values[name] = env
    for name in _FLAG_NAMES:
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    cfg = RunConfig(subcommand=args.subcommand)
    for name, v in values.items():
        setattr(cfg, name, _coerce(name, v))
    validate(cfg)
    return cfg


def _floats(text: str, what: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise ConfigError(f"{what} must be a comma-separated list of numbers") from None


def _level_spec(text: str) -> tuple[str, float]:
    text = text.strip()
    if text.startswith("qmax:"):
        try:
            return "qmax", float(text[5:])
        except ValueError:
            raise ConfigError(f"bad level spec {text!r}") from None
    try:
        return "abs", float(text)
    except ValueError:
        raise ConfigError(f"bad level spec {text!r}; use a number or qmax:FRACTION") from None


def validate(cfg: RunConfig) -> None:
    if cfg.subcommand in ("levelset", "confset", "visualize") and not cfg.input:
        raise ConfigError(f"{cfg.subcommand} needs --input")
    if cfg.h != "silverman":
        try:
            if not float(cfg.h) > 0:
                raise ValueError
        except ValueError:
            raise ConfigError("--h must be a positive number or 'silverman'") from None
    if cfg.method not in METHODS:
        raise ConfigError(f"--method must be one of {', '.join(METHODS)}")
    alphas = _floats(cfg.alphas, "--alphas")
    if not alphas or any(not 0 < a < 1 for a in alphas):
        raise ConfigError("--alphas must lie strictly between 0 and 1")
    if cfg.B < 1 or cfg.trials < 1 or cfg.n < 1 or cfg.workers < 1:
        raise ConfigError("--B, --trials, --n and --workers must be positive")
    if cfg.grid < 2:
        raise ConfigError("--grid must be at least 2")
    if cfg.scale not in ("none", "standardize"):
        raise ConfigError("--scale must be 'none' or 'standardize'")
    for name in ("eps", "tol"):
        v = getattr(cfg, name)
        if v is not None:
            try:
                if not float(v) > 0:
                    raise ValueError
            except ValueError:
                raise ConfigError(f"--{name} must be a positive number") from None
    if cfg.lambda_ is not None:
        kind, v = _level_spec(cfg.lambda_)
        if v <= 0:
            raise ConfigError("--lambda must be positive")
    if cfg.levels is not None:
        for t in cfg.levels.split(","):
            if _level_spec(t)[1] <= 0:
                raise ConfigError("--levels must be positive")
    if cfg.subcommand in ("levelset", "confset") and cfg.lambda_ is None:
        raise ConfigError(f"{cfg.subcommand} needs --lambda")
    if cfg.subcommand == "visualize" and cfg.levels is None and cfg.lambda_ is None:
        raise ConfigError("visualize needs --levels, or --lambda with --alphas")
    if cfg.subcommand == "coverage":
        if cfg.scenario is None:
            raise ConfigError(f"coverage needs --scenario; presets: {', '.join(SCENARIOS)}")
        if cfg.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {cfg.scenario!r}; presets: {', '.join(SCENARIOS)}")


def _load(cfg: RunConfig) -> KDE:
    try:
        data = load_csv(cfg.input, cfg.scale, cfg.delimiter)
        h = silverman_bandwidth(data) if cfg.h == "silverman" else float(cfg.h)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    return KDE(data.points, h)


def _grid(model: KDE, cfg: RunConfig) -> GridSpec:
    return GridSpec.around(model.data, 3 * model.bandwidth, cfg.grid)


def estimate_max(model: KDE, cfg: RunConfig) -> float:
    """Largest density over the data, a grid, and the mode reached by mean
    shift from the highest data point."""
    dens = model.evaluate(model.data)
    best = float(dens.max())
    res = cfg.grid if model.dim <= 2 else coarse_grid_resolution(model.dim)
    grid = GridSpec.around(model.data, 3 * model.bandwidth, res)
    best = max(best, float(model.evaluate(grid.nodes()).max()))
    top, _ = mean_shift_ascent(model, model.data[int(np.argmax(dens))], track=False)
    return max(best, float(model.evaluate(top)))


def _resolve_level(spec: str, model: KDE, cfg: RunConfig, cache: dict) -> float:
    kind, v = _level_spec(spec)
    if kind == "abs":
        return v
    if "max" not in cache:
        cache["max"] = estimate_max(model, cfg)
    return v * cache["max"]


def _write(path, text: str) -> None:
    if path:
        Path(path).write_text(text, encoding="utf-8")


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _envelope(cfg: RunConfig, **payload) -> dict:
    return {"config": cfg.echo(), "seed": cfg.seed, "version": __version__, **payload}


def cmd_levelset(cfg: RunConfig) -> int:
    model = _load(cfg)
    cache: dict = {}
    level = _resolve_level(cfg.lambda_, model, cfg, cache)
    eps = float(cfg.eps) if cfg.eps else model.bandwidth
    extra = {}
    if model.dim <= 2:
        grid = _grid(model, cfg)
        values = model.evaluate_grid(grid)
        if model.dim == 2:
            ls = extract_contour_2d(values, grid, level).measured(model.evaluate)
        else:
            pts = grid_crossings(values, grid, level)
            ls = LevelSetApprox(level, pts, source={"kind": "grid-crossings", "grid": grid.to_dict()}).measured(model.evaluate)
        upper = upper_level_set(values.ravel(), grid.nodes(), level, eps)
        extra["n_polylines"] = len(ls.polylines) if ls.polylines is not None else None
    else:
        tol = float(cfg.tol) if cfg.tol else 0.05 * level
        coarse = GridSpec.around(model.data, 3 * model.bandwidth, coarse_grid_resolution(model.dim))
        ls = extract_levelset_points(model, np.concatenate([model.data, coarse.nodes()]), level, tol)
        upper = upper_level_set(model.evaluate(model.data), model.data, level, eps)
    out = _envelope(
        cfg,
        bandwidth=model.bandwidth,
        level=level,
        eps=eps,
        n_components=upper.n_components,
        levelset=ls.to_dict(),
        **extra,
    )
    _write(cfg.out_json, _dump(out))
    if cfg.out_svg and model.dim == 2:
        svg = render_plane_svg(grid.lower, grid.upper, ls.polylines, points=model.data, title=f"level {level:.4g}")
        _write(cfg.out_svg, svg)
    if ls.empty:
        raise EmptyResult(f"level set at {level:.6g} is empty")
    log.info("level %.6g: %d vertices, %d upper components", level, len(ls), upper.n_components)
    return EXIT_OK


def cmd_confset(cfg: RunConfig) -> int:
    model = _load(cfg)
    level = _resolve_level(cfg.lambda_, model, cfg, {})
    boot = BootstrapConfig(cfg.B, cfg.seed, _floats(cfg.alphas, "--alphas"))
    where = _grid(model, cfg) if model.dim <= 2 else default_support(model)
    kw = {}
    if cfg.method == "hausdorff" and model.dim > 2:
        kw["levelset_tol"] = float(cfg.tol) if cfg.tol else 0.05 * level
    try:
        sets = confidence_sets(model, level, cfg.method, boot, where, **kw)
    except EmptyLevelSet as exc:
        raise EmptyResult(str(exc)) from None
    out = _envelope(cfg, bandwidth=model.bandwidth, level=level, confidence_sets=[cs.to_dict() for cs in sets])
    _write(cfg.out_json, _dump(out))
    if cfg.out_svg and model.dim == 2:
        cs = sets[0]
        _write(cfg.out_svg, region_svg(model, level, cs, where))
    return EXIT_OK


def region_svg(model: KDE, level: float, cs, grid: GridSpec, cells_per_axis: int = 96) -> str:
    """Cells coloured by the pointwise test outcome at their centres, with the
    estimated level set drawn on top."""
    shown = GridSpec(grid.lower, grid.upper, cells_per_axis + 1)
    step = shown.spacing
    ax = [a[:-1] + s / 2 for a, s in zip(shown.axes(), step)]
    centres = np.stack([m.ravel() for m in np.meshgrid(*ax, indexing="ij")], axis=1)
    tests = pointwise_tests(model, level, cs, centres)
    cells = [
        (c[0] - step[0] / 2, c[1] - step[1] / 2, step[0], step[1], REGION_COLORS[r])
        for c, r in zip(centres, tests["region"])
    ]
    contour = extract_contour_2d(model.evaluate_grid(grid), grid, level)
    title = f"{cs.method} confidence set, alpha={cs.alpha:.2f}, level {level:.4g}"
    return render_plane_svg(grid.lower, grid.upper, contour.polylines, cells=cells, title=title)


def cmd_visualize(cfg: RunConfig) -> int:
    model = _load(cfg)
    eps = float(cfg.eps) if cfg.eps else model.bandwidth
    modes, assignment = find_modes(model)
    cache: dict = {}
    if cfg.levels is not None:
        levels = sorted(_resolve_level(t, model, cfg, cache) for t in cfg.levels.split(",") if t.strip())
        alphas = None
    else:
        level = _resolve_level(cfg.lambda_, model, cfg, cache)
        boot = BootstrapConfig(cfg.B, cfg.seed, _floats(cfg.alphas, "--alphas"))
        where = _grid(model, cfg) if model.dim <= 2 else default_support(model)
        sets = confidence_sets(model, level, "sup", boot, where)
        pairs = confidence_levels(level, {cs.alpha: cs.half_width for cs in sets})
        alphas = [a for a, _ in pairs]
        levels = [lv for _, lv in pairs]
    graph = build_cluster_graph(modes, assignment, model, levels, eps, alphas)
    graph.meta["converged"] = int(assignment.converged.sum())
    _write(cfg.out_json, _dump(_envelope(cfg, graph=graph.to_dict())))
    if cfg.out_svg:
        emit_svg(graph, cfg.out_svg)
    return EXIT_OK


def cmd_coverage(cfg: RunConfig) -> int:
    report = run_coverage(
        cfg.scenario, cfg.n, cfg.method, _floats(cfg.alphas, "--alphas"), cfg.trials, cfg.B, cfg.seed,
        resolution=cfg.grid, workers=cfg.workers,
    )
    log.info("coverage run took %.1f s", report.wall_time)
    _write(cfg.out_json, _dump(_envelope(cfg, report=report.to_dict())))
    table = format_table([report])
    if cfg.out_table:
        _write(cfg.out_table, table)
    else:
        sys.stdout.write(table)
    return EXIT_OK


COMMANDS = {"levelset": cmd_levelset, "confset": cmd_confset, "visualize": cmd_visualize, "coverage": cmd_coverage}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s", stream=sys.stderr)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    try:
        cfg = resolve_config(args)
        return COMMANDS[cfg.subcommand](cfg)
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except (EmptyResult, NothingToDraw) as exc:
        log.error("empty result: %s", exc)
        return EXIT_EMPTY
    except (OSError, InputError) as exc:
        log.error("I/O error: %s", exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
