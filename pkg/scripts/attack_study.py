"""All three adversary kinds over a ratio grid (threshold: 99.9% of honest nodes).

    python scripts/attack_study.py --n 256 --ratios 0,0.01,0.1,0.25,0.5 --out results/attacks.csv
"""

import argparse
import sys

from handel import simulator as sim


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--n", type=int, default=256)
    p.add_argument("--ratios", default="0,0.01,0.1,0.25,0.5")
    p.add_argument("--runs", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    a = p.parse_args(argv)
    ratios = [float(x) for x in a.ratios.split(",")]
    base = sim.Scenario(n=a.n, runs=a.runs, seed=a.seed, drain=True)
    rows = []
    for kind in ("fail_silent", "byz_minimal", "byz_invalid"):
        for v, runs in sim.sweep(base, kind, ratios):
            unattributed = sum(m.unattributed for m in runs)
            rows.append([kind, f"{v:g}", *sim.summary_row("mean", runs), str(unattributed)])
            print(f"{kind}={v:g}: time {rows[-1][6]} ms, completed {rows[-1][-2]}", file=sys.stderr)
    text = sim.to_csv(["axis", "value", *sim.CSV_COLUMNS, "unattributed"], rows)
    if a.out:
        open(a.out, "w").write(text)
    else:
        sys.stdout.write(text)


if __name__ == "__main__":
    main()
