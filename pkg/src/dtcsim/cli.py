"""Command-line interface: batch in, files out."""

from __future__ import annotations

import argparse
import math
import sys

from . import harness
from .spinsys import CapacityError, ConfigError


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="experiment config file (INI sections)")
    p.add_argument("--preset", help="packaged preset name (fig1..fig4)")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--workers", type=int, help="parallel worker processes")
    p.add_argument("--out", help="output directory")
    p.add_argument("--mode", choices=["delta", "finite"], help="pulse realization")
    p.add_argument("--h1", choices=["off", "on", "cw"], help="spectator-H handling")
    p.add_argument("--force", action="store_true", help="override the runtime budget guard")


def _resolve_config(args) -> harness.ExperimentConfig:
    overrides = {
        "seed": args.seed,
        "workers": args.workers,
        "out_dir": args.out,
        "mode": args.mode,
        "h1": args.h1,
    }
    if args.force:
        overrides["force"] = True
    if args.preset and args.config:
        raise ConfigError("give either --preset or --config, not both")
    if args.preset:
        return harness.preset_config(args.preset, overrides)
    if args.config:
        return harness.load_config(args.config, overrides)
    raise ConfigError("one of --preset or --config is required")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="dtcsim",
        description="Simulate period-doubling drive experiments on dipolar spin clusters",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    for name, help_text in (
        ("simulate", "single records plus spectra for a (tau, theta) list"),
        ("sweep", "theta x tau grid with Gaussian fits and region boundary"),
        ("echo", "forward drive plus unwrapping scans"),
        ("phasepair", "two-pulse phase-pair comparison"),
    ):
        p = sub.add_parser(name, help=help_text)
        _add_common(p)

    p_an = sub.add_parser("analyze", help="re-run analysis on stored record CSVs")
    p_an.add_argument("--records", nargs="+", required=True, help="record CSV files")
    p_an.add_argument("--out", required=True, help="output directory")
    p_an.add_argument("--window-start", type=int, default=None)
    p_an.add_argument("--window-length", type=int, default=None)

    p_env = sub.add_parser("envelope", help="write a |cos eps|^N envelope CSV")
    p_env.add_argument("--epsilon-pi", type=float, required=True, help="eps in units of pi")
    p_env.add_argument("--n-max", type=int, default=128)
    p_env.add_argument("--out", required=True, help="output CSV path")

    args = parser.parse_args(argv)
    try:
        if args.command in ("simulate", "sweep", "echo", "phasepair"):
            cfg = _resolve_config(args)
            manifest = harness.run_experiment(cfg, args.command)
            n_fail = len(manifest["failures"])
            print(f"{args.command}: {len(manifest['artifacts'])} artifacts -> {cfg.out_dir}"
                  + (f" ({n_fail} failed points)" if n_fail else ""))
            return 1 if n_fail else 0
        if args.command == "analyze":
            window = None
            if args.window_length is not None:
                window = (args.window_start or 0, args.window_length)
            harness.analyze(args.records, args.out, window)
            print(f"analyze: wrote {args.out}")
            return 0
        if args.command == "envelope":
            harness.envelope_csv(args.epsilon_pi * math.pi, args.n_max, args.out)
            print(f"envelope: wrote {args.out}")
            return 0
    except (ConfigError, CapacityError, harness.BudgetError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
