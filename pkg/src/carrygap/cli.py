"""
Command-line front end.

    carrygap synth   --out DIR [--seed N]
    carrygap identify --config CFG --out DIR
    carrygap fit      --config CFG --out DIR [--spec NAME ...]
    carrygap loyo | scan | nested | pca | report  --config CFG --out DIR

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields
from pathlib import Path

from .errors import CarryGapError, ConfigError
from .pipeline import RunConfig, Session
from .synth_oracle import SynthWorldConfig, gen_world

logger = logging.getLogger("carrygap")

COMMANDS = ("synth", "identify", "fit", "loyo", "scan", "nested", "pca", "report")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="carrygap", description="Option-implied carry gap pipeline")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML run configuration")
    common.add_argument("--out", type=Path, help="output directory (default: config 'output')")
    common.add_argument("--jobs", type=int, help="worker cap for fold-level parallelism")
    common.add_argument("--seed", type=int, help="seed (synth only; recorded otherwise)")
    common.add_argument("--spec", nargs="+", metavar="NAME", help="specification names")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config entry, e.g. --set hac.lag=10")
    common.add_argument("-v", "--verbose", action="count", default=0)
    helps = {
        "synth": "generate a synthetic input world with planted ground truth",
        "identify": "implied discount factors and carry gaps",
        "fit": "in-sample fits with HAC inference",
        "loyo": "leave-one-year-out evaluation",
        "scan": "incremental R2 by lookback window",
        "nested": "nested horizon selection",
        "pca": "PCA rotation and residualisation checks",
        "report": "run every step",
    }
    for c in COMMANDS:
        sub.add_parser(c, parents=[common], help=helps[c])
    return parser


def _load_config(args) -> RunConfig:
    overrides = list(args.overrides)
    if args.jobs is not None:
        overrides.append(f"jobs={args.jobs}")
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.spec:
        overrides.append("specs=[" + ",".join(args.spec) + "]")
    return RunConfig.load(args.config, overrides)


def _out_dir(args, cfg: RunConfig) -> Path:
    return args.out if args.out is not None else cfg.path(cfg["output"])


def cmd_synth(args, cfg: RunConfig) -> int:
    known = {f.name for f in fields(SynthWorldConfig)}
    opts = dict(cfg["synth"])
    bad = sorted(set(opts) - known)
    if bad:
        raise ConfigError(f"unknown synth option(s) {bad}")
    for k in ("markets", "extra_assets"):
        if k in opts:
            opts[k] = tuple(opts[k])
    opts["seed"] = int(cfg["seed"])
    world = gen_world(SynthWorldConfig(**opts), _out_dir(args, cfg))
    print(f"synthetic world written to {world.out_dir} "
          f"(chains: {', '.join(f'{m}={n}' for m, n in world.manifest['n_chains'].items())})")
    return 0


def run(args) -> int:
    cfg = _load_config(args)
    if args.command == "synth":
        return cmd_synth(args, cfg)
    out = _out_dir(args, cfg)
    s = Session(cfg, out)
    steps = {
        "identify": [s.identify],
        "fit": [s.panel_csv, s.fit, s.bins],
        "loyo": [s.loyo],
        "scan": [s.scan],
        "nested": [s.nested],
        "pca": [s.pca],
        "report": [s.identify, s.panel_csv, s.fit, s.bins, s.loyo, s.scan, s.nested, s.pca],
    }[args.command]
    for step in steps:
        step()
    ident = s.ident
    for m, c in ident.counts.items():
        print(f"{m}: {c['rows']} quote rows, {c['rejected_rows']} rejected, {c['chains']} chains, "
              f"{c['identified']} identified")
    if not ident.observations:
        logger.warning("no carry-gap observations identified")
    print(f"reports written to {out}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return run(args)
    except CarryGapError as exc:
        print(f"carrygap: error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
