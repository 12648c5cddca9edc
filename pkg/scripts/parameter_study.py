"""Dissemination period, fast-path fan-out and level delay, one axis at a time.

    python scripts/parameter_study.py --n 256 --runs 3 --out results/parameters.csv
"""

import argparse
import sys

from handel import simulator as sim

GRID = {
    "dissemination_period": [5, 10, 20, 50, 100],
    "fast_path_peers": [0, 5, 10, 20],
    "level_delay": [0, 25, 50, 100, 200],
}


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--n", type=int, default=256)
    p.add_argument("--runs", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    a = p.parse_args(argv)
    base = sim.Scenario(n=a.n, runs=a.runs, seed=a.seed)
    rows = []
    for axis, values in GRID.items():
        for v, runs in sim.sweep(base, axis, values):
            rows.append([axis, f"{v:g}", *sim.summary_row("mean", runs)])
            print(f"{axis}={v:g}: time {rows[-1][6]} ms, msgs {rows[-1][8]}", file=sys.stderr)
    text = sim.to_csv(["axis", "value", *sim.CSV_COLUMNS], rows)
    if a.out:
        open(a.out, "w").write(text)
    else:
        sys.stdout.write(text)


if __name__ == "__main__":
    main()
