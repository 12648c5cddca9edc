"""Regenerate the golden CSV files used by the CLI determinism tests."""

from pathlib import Path

from handel.cli import main

GOLDEN = Path(__file__).resolve().parent.parent / "tests" / "golden"

COMMANDS = {
    "simulate.csv": ["simulate", "--n", "64", "--seed", "7", "--threshold", "0.999", "--runs", "2"],
    "sweep.csv": ["sweep", "--n", "64", "--seed", "3", "--axis", "dissemination_period",
                  "--values", "10,20,50", "--runs", "1"],
    "attacks.csv": ["attacks", "--kind", "invalid", "--ratios", "0,0.01,0.25,0.5", "--n", "64",
                    "--seed", "2", "--runs", "1"],
    "convergence.csv": ["convergence", "--n-exp", "10", "--b", "0.2", "--trials", "100", "--seed", "1"],
    "wire-check.csv": ["wire-check", "--n", "4000"],
}


def regenerate():
    GOLDEN.mkdir(parents=True, exist_ok=True)
    for name, argv in COMMANDS.items():
        code = main([*argv, "--out", str(GOLDEN / name)])
        print(f"{name}: exit {code}")


if __name__ == "__main__":
    regenerate()
