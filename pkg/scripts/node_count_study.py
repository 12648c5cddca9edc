"""Completion time vs network size, failure-free and with fail-silent nodes.

    python scripts/node_count_study.py --sizes 128,256,512,1024 --runs 5 --out results/node_count.csv
"""

import argparse
import sys

from handel import simulator as sim


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--sizes", default="128,256,512,1024")
    p.add_argument("--failures", default="0,0.25", help="fail-silent fractions")
    p.add_argument("--threshold", type=float, default=0.51, help="fraction of all nodes")
    p.add_argument("--runs", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    a = p.parse_args(argv)
    header = ["fail_silent", "axis", "value", *sim.CSV_COLUMNS]
    rows = []
    for f in (float(x) for x in a.failures.split(",")):
        base = sim.Scenario(seed=a.seed, runs=a.runs, threshold_fraction=a.threshold, threshold_of="total",
                            behaviors=tuple(sorted({"fail_silent": f, "honest": 1 - f}.items())))
        for n, runs in sim.sweep(base, "n", [int(x) for x in a.sizes.split(",")]):
            rows.append([f"{f:g}", "n", str(n), *sim.summary_row("mean", runs)])
            print(f"fail_silent={f:g} n={n}: {rows[-1][7]} ms", file=sys.stderr)
    text = sim.to_csv(header, rows)
    if a.out:
        open(a.out, "w").write(text)
    else:
        sys.stdout.write(text)


if __name__ == "__main__":
    main()
