"""Command line: ``lab <subcommand> --config <file> [--out dir] [--seed n]``.

Every experiment kind is a subcommand; a config file supplies the keys and
inline flags override individual entries.  ``lab suite --manifest FILE``
runs one config per manifest line and aggregates the verdicts.  Exit codes:
0 all assertions pass, 1 an assertion or refusal failed, 2 bad
configuration.
"""

from __future__ import annotations

import argparse
import sys

from .config import KINDS, ConfigError, load_config
from .runner import run, suite


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--out", help="output directory (default from config or lab-out)")
    p.add_argument("--seed", type=int, default=None, help="override the run seed")
    p.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override a single config key (repeatable)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lab",
        description="numerical laboratory for conical elliptic coefficients, "
        "cone-harmonic energies, the frozen-coefficient iteration, and "
        "heat-semigroup smoothing",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for kind in KINDS:
        p = sub.add_parser(kind, help=f"run a '{kind}' experiment")
        _add_common(p)
        if kind == "campanato":
            p.add_argument("--coeff", help="true coefficient family")
            p.add_argument("--frozen", help="frozen (model) coefficient family")
            p.add_argument("--rho", type=float, help="dyadic ratio override")
            p.add_argument("--levels", type=int, help="number of levels")
            p.add_argument("--h", type=float, dest="h", help="grid spacing")
    s = sub.add_parser("suite", help="run a manifest of config files")
    s.add_argument("--manifest", required=True, help="file with one config path per line")
    s.add_argument("--out", default="lab-out")
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--workers", type=int, default=1)
    return parser


def _flat_from_args(args) -> dict:
    flat = {}
    if args.config:
        flat.update(load_config(args.config))
    flat["kind"] = args.command
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, val = item.split("=", 1)
        flat[key.strip()] = val.strip()
    if args.command == "campanato":
        for key in ("coeff", "frozen", "rho", "levels", "h"):
            val = getattr(args, key, None)
            if val is not None:
                flat[key] = str(val)
    if args.seed is not None:
        flat["seed"] = str(args.seed)
    return flat


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "suite":
        try:
            with open(args.manifest, "r", encoding="utf-8") as fh:
                paths = [ln.strip() for ln in fh if ln.strip() and not ln.lstrip().startswith("#")]
        except OSError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        outcome = suite(paths, out_dir=args.out, workers=args.workers, seed=args.seed)
        for member in outcome.report["members"]:
            status = "pass" if member["exit"] == 0 else f"FAIL({member['exit']})"
            print(f"{status:9s} {member['path']}")
        print("suite:", "all pass" if outcome.report["all_pass"] else f"failing: {outcome.report['failing']}")
        return outcome.exit_code
    try:
        flat = _flat_from_args(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    outcome = run(flat, out_dir=args.out, seed=args.seed)
    if outcome.exit_code == 2:
        print(f"config error: {outcome.report.get('error')}", file=sys.stderr)
        return 2
    for name, v in outcome.report.get("verdicts", {}).items():
        status = "pass" if v["pass"] else "FAIL"
        print(f"{status:5s} {name}: value={v['value']:.6g} tolerance={v['tolerance']:.6g}")
    if "error" in outcome.report:
        print(f"error: {outcome.report['error']}", file=sys.stderr)
    return outcome.exit_code


if __name__ == "__main__":
    sys.exit(main())
