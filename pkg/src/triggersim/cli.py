"""Command-line interface.

Exit codes: 0 success, 2 configuration error, 3 a validation check failed,
4 excessive failed runs (step budget) made an estimate invalid.
"""

from __future__ import annotations

import argparse
import sys

from .sweep import (
    ConfigError,
    config_from_sources,
    parse_config_file,
    render_report,
    run_command,
)
from .triggering import StepBudgetExceeded

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_VALIDATION = 3
EXIT_FAILED_RUNS = 4


def _agents_arg(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(tok) for tok in text.split(",") if tok.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad agents list {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="triggersim",
        description="Monte Carlo comparison of time- and event-triggered "
                    "broadcasting for noisy single-integrator consensus.",
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    for name, help_text in (
        ("ratio-sweep", "cost ratio of event- over time-triggered control per ensemble size"),
        ("exit-moments", "moments of the event-triggered stopping time"),
        ("validate-renewal", "first-interval vs long-run estimator agreement"),
        ("gumbel-check", "extreme-value fit of rescaled stopping times"),
        ("scaling-check", "threshold-scaling laws under common random numbers"),
        ("closed-forms", "analytic costs and asymptotics, no simulation"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", metavar="FILE", default=None,
                       help="key = value file mirroring these flags; flags win")
        p.add_argument("--agents", type=_agents_arg, default=None, metavar="N1,N2,...",
                       help="ensemble sizes (default 2,12,22,...,72)")
        p.add_argument("--runs", type=int, default=None, help="Monte Carlo runs per size (default 10000)")
        p.add_argument("--dt", type=float, default=None, help="grid step in seconds (default 1e-4)")
        p.add_argument("--delta", type=float, default=None, help="event threshold (default 1.0)")
        p.add_argument("--period", type=float, default=None, help="explicit time-triggered period")
        p.add_argument("--horizon", type=float, default=None, help="long-run horizon in seconds (default 1000)")
        p.add_argument("--seed", type=int, default=None, help="master seed (default 0)")
        p.add_argument("--workers", type=int, default=None, help="worker processes (default 1)")
        p.add_argument("--bridge-correction", action=argparse.BooleanOptionalAction, default=None,
                       help="sub-step crossing correction (default off)")
        p.add_argument("--backend", choices=("numba", "numpy"), default=None,
                       help="kernel backend (default: TRIGGERSIM_BACKEND or numba when available)")
        p.add_argument("--out", default=None, metavar="PATH", help="output file (default stdout)")
        p.add_argument("--format", dest="fmt", choices=("csv", "json"), default=None,
                       help="output format (default csv)")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        file_values = parse_config_file(args.config) if args.config else {}
        cli_values = {
            "agents": args.agents,
            "runs": args.runs,
            "dt": args.dt,
            "delta": args.delta,
            "period": args.period,
            "horizon": args.horizon,
            "seed": args.seed,
            "workers": args.workers,
            "bridge_correction": args.bridge_correction,
            "backend": args.backend,
            "out": args.out,
            "fmt": args.fmt,
        }
        config = config_from_sources(args.command, file_values, cli_values)
        config.validate()
    except (ConfigError, OSError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        report = run_command(config)
    except StepBudgetExceeded as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILED_RUNS
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    text = render_report(report, config.fmt)
    if config.out:
        with open(config.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)

    for check in report.checks:
        status = "pass" if check["passed"] else "FAIL"
        detail = ", ".join(f"{k}={v}" for k, v in check.items() if k not in ("name", "passed"))
        print(f"[{status}] {check['name']}: {detail}", file=sys.stderr)

    if report.invalid_estimates:
        print("error: estimates invalid, too many runs exhausted the step budget", file=sys.stderr)
        return EXIT_FAILED_RUNS
    if not report.passed:
        return EXIT_VALIDATION
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
