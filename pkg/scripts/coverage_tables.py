"""Coverage tables for the three-GMM and four-mixture scenarios.

Runs every (sample size, method) cell and writes one JSON report per cell plus
the aligned text tables. The defaults are desk scale; the full grid of sample
sizes takes hours on one core, so use --workers where cores are available.

    python scripts/coverage_tables.py --out results/coverage --sizes 500 1000
"""

import argparse
from pathlib import Path

from levelset.experiments import format_table, run_coverage

TABLES = {
    "three-gmm": ("hausdorff",),
    "four-mixture": ("hausdorff", "sup", "scaled"),
}


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", type=Path, default=Path("results/coverage"))
    ap.add_argument("--scenario", choices=sorted(TABLES), nargs="*", default=sorted(TABLES))
    ap.add_argument("--sizes", type=int, nargs="+", default=[500, 1000, 2500])
    ap.add_argument("--alphas", type=float, nargs="+", default=[0.10, 0.05])
    ap.add_argument("--trials", type=int, default=200)
    ap.add_argument("--B", type=int, default=300)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()

    args.out.mkdir(parents=True, exist_ok=True)
    for scenario in args.scenario:
        reports = []
        for n in args.sizes:
            for method in TABLES[scenario]:
                rep = run_coverage(scenario, n, method, args.alphas, args.trials, args.B, args.seed, workers=args.workers)
                print(f"{scenario} n={n} {method}: {rep.coverage} ({rep.wall_time:.0f} s)", flush=True)
                (args.out / f"{scenario}_{method}_n{n}.json").write_text(rep.to_json() + "\n")
                reports.append(rep)
        table = format_table(reports)
        (args.out / f"{scenario}_table.txt").write_text(table)
        print(table)


if __name__ == "__main__":
    main()
