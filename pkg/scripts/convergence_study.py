"""Monte-Carlo success rate of the convergence model over n and C.

    python scripts/convergence_study.py --n-exps 8,10,12 --trials 500 --out results/convergence.csv
"""

import argparse
import sys

from handel import convergence as cv
from handel.simulator import to_csv


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--n-exps", default="10,11,12")
    p.add_argument("--b", type=float, default=0.2)
    p.add_argument("--b-max", type=float, default=0.25)
    p.add_argument("--tau", type=float, default=0.5)
    p.add_argument("--c-factors", default="0.5,1.01,2", help="multiples of the minimal C")
    p.add_argument("--trials", type=int, default=300)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    a = p.parse_args(argv)
    rows = []
    for n in (int(x) for x in a.n_exps.split(",")):
        for f in (float(x) for x in a.c_factors.split(",")):
            ref = cv.ConvergenceParams(n=n, b=a.b, b_max=a.b_max, tau=a.tau, trials=a.trials, seed=a.seed)
            params = cv.ConvergenceParams(n=n, b=a.b, b_max=a.b_max, tau=a.tau, C=f * cv.c_lower_bound(ref.tau0),
                                          r=ref.r, trials=a.trials, seed=a.seed)
            try:
                est = cv.estimate_theorem_probability(params)
            except cv.ConvergenceError as e:
                print(f"n={n} C x{f}: skipped ({e})", file=sys.stderr)
                continue
            rows.append(cv.csv_row(params, est))
            print(f"n={n} C={params.C:.2f}: success {est.rate:.3f}", file=sys.stderr)
    text = to_csv(cv.CSV_COLUMNS, rows)
    if a.out:
        open(a.out, "w").write(text)
    else:
        sys.stdout.write(text)


if __name__ == "__main__":
    main()
