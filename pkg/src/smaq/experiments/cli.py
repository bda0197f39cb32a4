"""Command line entry point: ``python -m smaq.experiments <subcommand>``.

Subcommands ``migration-time``, ``bulk`` and ``webperf`` run one scenario;
``campaign`` runs an experiment over both orbits and both loss rates in
both modes. Results go to ``--output`` as CSV plus SVG plots.
"""
import argparse
import sys
from dataclasses import replace
from typing import List, Optional

from ..errors import ConfigError
from .config import EXPERIMENTS, MODES, ORBITS, ScenarioConfig, load_config, parse_loss
from .output import emit_outputs
from .runner import campaign_configs, run_campaign


def _checkpoints(text: str):
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError("checkpoints are comma-separated seconds") from None


def _loss(text: str) -> float:
    try:
        return parse_loss(text)
    except ConfigError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="smaq-experiments", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="INI file with a [scenario] section; flags override it")
        p.add_argument("--seed", type=int)
        p.add_argument("--repetitions", type=int)
        p.add_argument("--output", default="results", help="output directory (default: results)")

    for name in EXPERIMENTS:
        p = sub.add_parser(name, help=f"run one {name} scenario")
        common(p)
        p.add_argument("--orbit", choices=ORBITS, type=str.upper)
        p.add_argument("--loss", type=_loss, help="fraction (0.001) or percentage (0.1%%)")
        p.add_argument("--mode", choices=MODES)
        p.add_argument("--pep-count", type=int)
        if name == "bulk":
            p.add_argument("--checkpoints", type=_checkpoints, help="seconds, e.g. 10,20,30")
        if name == "webperf":
            p.add_argument("--manifest", help="built-in page name or JSON manifest path")

    p = sub.add_parser("campaign", help="run an experiment over all orbits, losses and modes")
    common(p)
    p.add_argument("experiment", choices=EXPERIMENTS)
    p.add_argument("--orbit", choices=ORBITS, type=str.upper, action="append",
                   help="restrict to this orbit (repeatable)")
    p.add_argument("--loss", type=_loss, action="append", help="restrict to this loss (repeatable)")
    p.add_argument("--checkpoints", type=_checkpoints)
    p.add_argument("--manifest")
    return parser


def _single_config(args) -> ScenarioConfig:
    cfg = load_config(args.config) if args.config else ScenarioConfig(experiment=args.command)
    if cfg.experiment != args.command:
        raise ConfigError(f"config file describes {cfg.experiment!r}, not {args.command!r}")
    changes = {}
    for field in ("orbit", "loss", "mode", "seed", "repetitions", "checkpoints", "manifest"):
        value = getattr(args, field, None)
        if value is not None:
            changes[field] = value
    if args.pep_count is not None:
        changes["pep_count"] = args.pep_count
    elif "mode" in changes:
        changes["pep_count"] = None
    return replace(cfg, **changes)


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "campaign":
            base = load_config(args.config) if args.config else ScenarioConfig(experiment=args.experiment)
            extra = {}
            if args.checkpoints or base.checkpoints:
                extra["checkpoints"] = args.checkpoints or base.checkpoints
            if args.manifest or base.manifest:
                extra["manifest"] = args.manifest or base.manifest
            configs = campaign_configs(
                args.experiment, orbits=args.orbit or ORBITS, losses=args.loss or (0.0001, 0.001),
                repetitions=args.repetitions or base.repetitions, seed=args.seed if args.seed is not None else base.seed,
                **extra)
        else:
            configs = [_single_config(args)]
        records = run_campaign(configs)
        paths = emit_outputs(records, args.output)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for rec in records:
        summary = ", ".join(f"{m} median {rec.median(m):.6g}" for m in rec.metrics()[:3])
        print(f"{rec.scenario}: {len(rec.runs)} runs, {len(rec.failures)} failed; {summary}")
    for path in paths:
        print(f"wrote {path}")
    return 0
