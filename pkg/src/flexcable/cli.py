"""Command-line entry point: ``flexcable <subcommand> [options]``.

Exit status is 0 when the scenario ran (metric outcomes such as a window
violation are reported data), 2 for configuration errors and 1 for any
other module error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import scenarios
from .errors import AllZeroSpectrum, ConfigError, FlexCableError, NumericalBlowup

log = logging.getLogger("flexcable")


def _common(p: argparse.ArgumentParser):
    p.add_argument("--profile", choices=scenarios.PROFILES, default="sim", help="named parameter preset")
    p.add_argument("--config", help="YAML file merged over the profile")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one key, e.g. cable.length=2")
    p.add_argument("--seed", type=int, help="seed recorded in the manifest (PSO, disturbance, noise)")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")


def _orders(text: str):
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"orders must be comma-separated integers: {text}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flexcable", description="Flexible-cable quadrotor simulation, reduction and control.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="FDM run under hover or PID")
    _common(p)
    p.add_argument("--controller", choices=("pid", "hover"), default="pid")
    p.add_argument("--duration", type=float)

    p = sub.add_parser("collect", help="sweep run -> snapshot tensor")
    _common(p)

    p = sub.add_parser("reduce", help="snapshot tensor -> mode bank")
    _common(p)
    p.add_argument("--snapshots", required=True)

    p = sub.add_parser("control", help="closed-loop regulation or tracking with a mode bank")
    _common(p)
    p.add_argument("--bank", required=True)
    p.add_argument("--scenario", choices=("regulation", "shape-tracking", "disturbance-tracking"), default="regulation")
    p.add_argument("--controller", choices=("nmpc", "pid"), default="nmpc")

    p = sub.add_parser("plan", help="PSO window-crossing plan")
    _common(p)
    p.add_argument("--bank")

    p = sub.add_parser("identify", help="fit drag coefficient and Young's modulus to a recording")
    _common(p)
    p.add_argument("--recording", help="point-cloud CSV (t,marker,x,y,z); synthetic data when omitted")

    p = sub.add_parser("tune", help="gradient tuning of the PID position gains")
    _common(p)
    p.add_argument("--bank")

    p = sub.add_parser("compare", help="FDM vs ROM fidelity (E_m per order, E1/E2 series)")
    _common(p)
    p.add_argument("--bank")
    p.add_argument("--orders", type=_orders)
    p.add_argument("--duration", type=float)

    p = sub.add_parser("run", help="run a full scenario, building a mode bank if needed")
    p.add_argument("kind", choices=scenarios.KINDS)
    _common(p)
    p.add_argument("--controller", choices=("nmpc", "pid"), default="nmpc")
    p.add_argument("--bank")
    p.add_argument("--recording")
    p.add_argument("--orders", type=_orders)
    return parser


def dispatch(args, cfg) -> dict:
    c = args.command
    if c == "simulate":
        return scenarios.run_simulate(cfg, args.out, args.controller, args.duration)
    if c == "collect":
        return scenarios.run_collect(cfg, args.out)
    if c == "reduce":
        return scenarios.run_reduce(cfg, args.snapshots, args.out)
    if c == "control":
        if args.scenario == "regulation":
            return scenarios.run_regulation(cfg, args.out, args.controller, args.bank)
        return scenarios.run_tracking(cfg, args.out, args.controller, args.bank, disturbed=args.scenario == "disturbance-tracking")
    if c == "plan":
        return scenarios.run_plan(cfg, args.out, args.bank)
    if c == "identify":
        return scenarios.run_identify(cfg, args.out, args.recording)
    if c == "tune":
        return scenarios.run_tune(cfg, args.out, args.bank)
    if c == "compare":
        return scenarios.run_compare(cfg, args.out, args.bank, args.orders, args.duration)
    return scenarios.run(args.kind, cfg, args.out, args.controller, args.bank, args.recording, args.orders)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = scenarios.load_config(args.profile, args.config, args.set, args.seed)
        cfg["profile"] = args.profile
        metrics = dispatch(args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except AllZeroSpectrum as exc:
        print(f"error: {exc}. The snapshot tensor carries no motion; collect a sweep that moves the cable.", file=sys.stderr)
        return 1
    except NumericalBlowup as exc:
        print(f"error: numerical blow-up: {exc}. Reduce fdm.dt.", file=sys.stderr)
        return 1
    except FlexCableError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    print(json.dumps(metrics, indent=2, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
