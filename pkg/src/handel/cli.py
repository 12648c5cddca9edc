"""Command-line entry point: ``handel <subcommand> [flags]``.

Subcommands write CSV to ``--out`` (or stdout) and a short summary to stderr.
Exit codes: 0 ok, 1 configuration error, 2 usage error, 3 a run did not
complete while ``--require-completion`` was set.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import fields, replace
from pathlib import Path
from typing import Any, Mapping, Optional, Sequence

import yaml

from handel import convergence as cv
from handel import simulator as sim
from handel.node import Message
from handel.overlay import num_levels, own_range
from handel.prng import keyed_stream
from handel.scheme import Contribution, PublicParams, ReferenceScheme
from handel.wire import decode_message, encode_message

EXIT_CONFIG = 1
EXIT_USAGE = 2
EXIT_INCOMPLETE = 3

BEHAVIOR_KEYS = tuple(b.value for b in sim.Behavior)
LATENCY_KEYS = ("latency_matrix", "latency_base_ms", "latency_jitter_ms")
_SCALAR_FIELDS = {
    f.name: f for f in fields(sim.Scenario) if f.name not in ("behaviors", "latency", "speed_factor_range")
}


def load_scenario(path: Optional[str | Path] = None, overrides: Optional[Mapping[str, Any]] = None) -> sim.Scenario:
    """Build a validated scenario from a flat YAML mapping plus overrides.

    Keys are :class:`~handel.simulator.Scenario` field names, the behavior
    kinds (fractions; ``honest`` defaults to the remainder) and
    ``latency_matrix`` / ``latency_base_ms`` / ``latency_jitter_ms``.
    """
    raw: dict[str, Any] = {}
    if path is not None:
        text = Path(path).read_text()
        loaded = yaml.safe_load(text) if text.strip() else {}
        if not isinstance(loaded, dict):
            raise sim.ConfigError("config: expected a flat key/value mapping")
        raw.update(loaded)
    raw.update({k: v for k, v in (overrides or {}).items() if v is not None})

    kwargs: dict[str, Any] = {}
    mix: dict[str, float] = {}
    for key, value in raw.items():
        if isinstance(value, (dict, list)) and key != "speed_factor_range":
            raise sim.ConfigError(f"{key}: nested values are not allowed")
        if key in BEHAVIOR_KEYS:
            mix[key] = _number(key, value)
        elif key in LATENCY_KEYS:
            continue
        elif key == "speed_factor_range":
            lo, hi = value if isinstance(value, (list, tuple)) else str(value).split(",")
            kwargs[key] = (_number(key, lo), _number(key, hi))
        elif key in _SCALAR_FIELDS:
            kwargs[key] = _coerce(key, value)
        else:
            raise sim.ConfigError(f"{key}: unknown configuration key")
    if "honest" not in mix:
        mix["honest"] = 1.0 - sum(mix.values())
    kwargs["behaviors"] = tuple(sorted((k, v) for k, v in mix.items() if v != 0 or k == "honest"))
    if raw.get("latency_matrix"):
        try:
            kwargs["latency"] = sim.LatencyModel.from_csv(raw["latency_matrix"])
        except OSError as e:
            raise sim.ConfigError(f"latency_matrix: {e}") from None
    elif "latency_base_ms" in raw or "latency_jitter_ms" in raw:
        kwargs["latency"] = sim.LatencyModel.uniform(
            _number("latency_base_ms", raw.get("latency_base_ms", 0.0)),
            _number("latency_jitter_ms", raw.get("latency_jitter_ms", 0.0)),
        )
    return sim.Scenario(**kwargs)


def _number(key: str, value) -> float:
    try:
        return float(value)
    except (TypeError, ValueError):
        raise sim.ConfigError(f"{key}: expected a number, got {value!r}") from None


def _coerce(key: str, value):
    default = _SCALAR_FIELDS[key].default
    if isinstance(default, bool):
        if isinstance(value, str):
            if value.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise sim.ConfigError(f"{key}: expected a boolean")
            return value.lower() in ("true", "1", "yes")
        return bool(value)
    if isinstance(default, int):
        try:
            if float(value) != int(float(value)):
                raise ValueError
            return int(float(value))
        except (TypeError, ValueError):
            raise sim.ConfigError(f"{key}: expected an integer, got {value!r}") from None
    if isinstance(default, float):
        return _number(key, value)
    return str(value)


# -- argument parsing ------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _scenario_flags(p: argparse.ArgumentParser, with_n: bool = True) -> None:
    p.add_argument("--config", help="flat YAML file with scenario fields")
    if with_n:
        p.add_argument("--n", type=int, help="participant count")
    p.add_argument("--seed", type=int, help="master seed (all randomness derives from it)")
    p.add_argument("--threshold", type=float, dest="threshold_fraction", help="threshold fraction")
    p.add_argument("--threshold-of", choices=("honest", "total"), dest="threshold_of")
    p.add_argument("--runs", type=int)
    p.add_argument("--fail-silent", type=float, dest="fail_silent", help="fraction of fail-silent nodes")
    p.add_argument("--byz-minimal", type=float, dest="byz_minimal")
    p.add_argument("--byz-invalid", type=float, dest="byz_invalid")
    p.add_argument("--dp", type=float, dest="dissemination_period", help="dissemination period (ms)")
    p.add_argument("--fast-path", type=int, dest="fast_path_peers")
    p.add_argument("--level-delay", type=float, dest="level_delay")
    p.add_argument("--max-time", type=float, dest="max_sim_time_ms")
    p.add_argument("--latency-matrix", dest="latency_matrix", help="CSV region latency matrix (ms)")
    p.add_argument("--drain", action="store_true", default=None)
    p.add_argument("--require-completion", action="store_true")


def _out_flag(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", help="CSV output path (default: stdout)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="handel", description="Handel aggregation simulator and experiments")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="run one scenario (one CSV row per run plus a mean row)")
    _scenario_flags(p)
    _out_flag(p)

    p = sub.add_parser("sweep", help="vary one scenario parameter")
    _scenario_flags(p)
    p.add_argument("--axis", required=True, choices=sim.SWEEP_AXES)
    p.add_argument("--values", required=True, help="comma-separated values")
    _out_flag(p)

    p = sub.add_parser("attacks", help="completion under a growing ratio of misbehaving nodes")
    _scenario_flags(p)
    p.add_argument("--kind", required=True, choices=("fail-silent", "minimal", "invalid"))
    p.add_argument("--ratios", required=True, help="comma-separated fractions")
    _out_flag(p)

    p = sub.add_parser("convergence", help="Monte-Carlo estimate of the convergence theorem")
    p.add_argument("--n-exp", type=int, required=True, dest="n", help="network has 2**n nodes")
    p.add_argument("--b", type=float, required=True)
    p.add_argument("--b-max", type=float, default=0.25, dest="b_max")
    p.add_argument("--tau", type=float, default=0.5)
    p.add_argument("--delta", type=float)
    p.add_argument("--C", type=float, dest="C")
    p.add_argument("--r", type=int)
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    _out_flag(p)

    p = sub.add_parser("wire-check", help="encode, size and round-trip one message per level")
    p.add_argument("--n", type=int, default=4000)
    p.add_argument("--seed", type=int, default=0)
    _out_flag(p)
    return parser


_SCENARIO_DESTS = (
    "n", "seed", "threshold_fraction", "threshold_of", "runs", "fail_silent", "byz_minimal",
    "byz_invalid", "dissemination_period", "fast_path_peers", "level_delay", "max_sim_time_ms",
    "latency_matrix", "drain",
)


def _scenario_from(args) -> sim.Scenario:
    overrides = {k: getattr(args, k, None) for k in _SCENARIO_DESTS}
    return load_scenario(args.config, overrides)


def _values(text: str, label: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise sim.ConfigError(f"{label}: expected comma-separated numbers") from None


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _say(msg: str) -> None:
    print(msg, file=sys.stderr)


def cmd_simulate(args) -> int:
    scenario = _scenario_from(args)
    runs = sim.run_all(scenario)
    rows = [sim.metrics_row(r, m) for r, m in enumerate(runs)]
    rows.append(sim.summary_row("mean", runs))
    _emit(sim.to_csv(sim.CSV_COLUMNS, rows), args.out)
    ok = all(m.completed for m in runs)
    _say(
        f"n={scenario.n} runs={len(runs)} completed={sum(m.completed for m in runs)}/{len(runs)} "
        f"time_avg={sum(m.time_ms_avg for m in runs) / len(runs):.1f}ms"
    )
    return EXIT_INCOMPLETE if args.require_completion and not ok else 0


def _table(axis: str, results) -> tuple[list[str], list[list[str]]]:
    header = ["axis", "value", *sim.CSV_COLUMNS]
    rows = [[axis, f"{v:g}", *sim.summary_row("mean", runs)] for v, runs in results]
    return header, rows


def _finish(args, header, rows, results) -> int:
    _emit(sim.to_csv(header, rows), args.out)
    for v, runs in results:
        _say(f"{v:g}: completed {sum(m.completed for m in runs)}/{len(runs)}, "
             f"time_avg {sum(m.time_ms_avg for m in runs) / len(runs):.1f}ms")
    ok = all(m.completed for _, runs in results for m in runs)
    return EXIT_INCOMPLETE if args.require_completion and not ok else 0


def cmd_sweep(args) -> int:
    base = _scenario_from(args)
    values = _values(args.values, "values")
    results = sim.sweep(base, args.axis, values)
    header, rows = _table(args.axis, results)
    return _finish(args, header, rows, results)


_ATTACK_AXIS = {"fail-silent": "fail_silent", "minimal": "byz_minimal", "invalid": "byz_invalid"}


def cmd_attacks(args) -> int:
    base = _scenario_from(args)
    axis = _ATTACK_AXIS[args.kind]
    ratios = _values(args.ratios, "ratios")
    results = sim.sweep(base, axis, ratios)
    header, rows = _table(axis, results)
    return _finish(args, header, rows, results)


def cmd_convergence(args) -> int:
    params = cv.ConvergenceParams(
        n=args.n, b=args.b, b_max=args.b_max, tau=args.tau, delta=args.delta,
        C=args.C, r=args.r, trials=args.trials, seed=args.seed,
    )
    est = cv.estimate_theorem_probability(params)
    _emit(sim.to_csv(cv.CSV_COLUMNS, [cv.csv_row(params, est)]), args.out)
    _say(f"success {est.successes}/{est.trials} = {est.rate:.4f} "
         f"[{est.ci_low:.4f}, {est.ci_high:.4f}], analytic failure bound {params.analytic_bound:.3g}")
    return 0


WIRE_COLUMNS = ("n", "level", "sender", "bytes", "roundtrip")


def wire_rows(n: int, seed: int) -> list[list[str]]:
    """Largest message per level (sender 0, full aggregate) and its round-trip status."""
    scheme = ReferenceScheme(PublicParams(n, keyed_stream("wire", seed, nbytes=32)))
    rows = []
    for level in range(1, num_levels(n) + 1):
        span = own_range(0, level - 1, n)
        bits = ((1 << len(span)) - 1) << span.start
        agg = Contribution(bits, n, scheme.expected_payload(bits))
        msg = Message(level, 0, agg, scheme.individual(0))
        data = encode_message(msg, n)
        rows.append([str(n), str(level), "0", str(len(data)), str(int(decode_message(data, n) == msg))])
    return rows


def cmd_wire_check(args) -> int:
    if args.n < 2:
        raise sim.ConfigError("n: need at least 2 participants")
    rows = wire_rows(args.n, args.seed)
    _emit(sim.to_csv(WIRE_COLUMNS, rows), args.out)
    _say(f"top-level message for n={args.n}: {rows[-1][3]} bytes")
    return 0 if all(r[4] == "1" for r in rows) else 1


COMMANDS = {
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "attacks": cmd_attacks,
    "convergence": cmd_convergence,
    "wire-check": cmd_wire_check,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if isinstance(e.code, int) else EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except (sim.ConfigError, cv.ConvergenceError) as e:
        _say(f"config error: {e}")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
