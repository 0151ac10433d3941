"""Command line entry point: ``roughmkv {run, replay, sweep, presets}``."""

import argparse
import logging
import sys

from . import harness
from .config import TOLERANCE_FIELDS, load_config, load_scenario, scenario_names, scenario_text
from .errors import ConfigError, ReproducibilityError


def _config(args):
    if bool(args.config) == bool(args.scenario):
        raise ConfigError("give exactly one of --config or --scenario")
    return load_config(args.config) if args.config else load_scenario(args.scenario)


def _print_checks(checks):
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.name:<40} {c.value:.6g}  ({c.band})")


def cmd_run(args):
    cfg = _config(args)
    res = harness.run(cfg, out_dir=args.out, seed=args.seed, threads=args.threads)
    print(f"scenario {cfg.name} [{cfg.gate.tag}] -> {res.out_dir}")
    _print_checks(res.checks)
    if res.exit_code == harness.EXIT_ERROR:
        print(f"error in stage {res.manifest.get('failed_stage')}: {res.manifest.get('error')}",
              file=sys.stderr)
    return res.exit_code


def cmd_replay(args):
    overrides = {}
    for name in TOLERANCE_FIELDS:
        value = getattr(args, name)
        if value is not None:
            overrides[name] = value
    res = harness.replay(args.manifest, overrides)
    print(f"verified {len(res.verified)} checksums, reproduced {len(res.reproduced)} reports")
    _print_checks(res.checks)
    return res.exit_code


def cmd_sweep(args):
    cfg = _config(args)
    values = [float(v) for v in args.values.split(",") if v.strip()] if args.values else []
    rows = harness.sweep(cfg, args.axis, values, args.out, threads=args.threads)
    print(f"{len(rows)} rows -> {args.out}")
    return harness.EXIT_OK


def cmd_presets(args):
    if args.name:
        print(scenario_text(args.name), end="")
        return harness.EXIT_OK
    for name in scenario_names():
        cfg = load_scenario(name)
        print(f"{name:<20} {cfg.gate.tag:<20} {cfg.scenario.description}")
    return harness.EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="roughmkv", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def source(p):
        p.add_argument("--config", help="path to an INI experiment config")
        p.add_argument("--scenario", help="name of a shipped scenario")
        p.add_argument("--threads", type=int, default=1)

    p = sub.add_parser("run", help="run the full pipeline for one config")
    source(p)
    p.add_argument("--out", help="output directory (defaults to [output] directory)")
    p.add_argument("--seed", type=int, help="override [solver] seed")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("replay", help="verify a run directory and re-evaluate its checks")
    p.add_argument("manifest", help="path to manifest.json")
    for name in TOLERANCE_FIELDS:
        kind = str if name == "law_flow_target" else float
        p.add_argument(f"--{name.replace('_', '-')}", dest=name, type=kind)
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("sweep", help="one CSV row of headline statistics per axis value")
    source(p)
    p.add_argument("--axis", required=True, choices=sorted(harness.SWEEP_AXES))
    p.add_argument("--values", default="", help="comma separated values")
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("presets", help="list shipped scenarios or print one")
    p.add_argument("name", nargs="?")
    p.set_defaults(func=cmd_presets)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ReproducibilityError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return harness.EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
