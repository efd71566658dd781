"""hboolean: run a configured experiment and write records.csv and summary.json."""
from __future__ import annotations

import argparse
import json
import sys

from ..errors import ConfigurationError
from .config import keys_help, load_config
from .runner import cells_of, check_feasible, run_experiment


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="hboolean", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=keys_help() + "\n\nConfig files: key = value per line, # comments, values parsed as JSON "
                             "when possible; a .json file with the same keys (flat or nested) also works.")
    p.add_argument("--config", required=True, metavar="PATH", help="key=value or .json config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a key (repeatable)")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--out", metavar="DIR", help="output directory (overrides output.dir)")
    p.add_argument("--threads", type=int, metavar="N", help="worker processes (overrides threads)")
    p.add_argument("--dry-run", action="store_true", help="validate the config and list the cells; draw nothing")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.set, args.seed, args.out, args.threads)
        if args.dry_run:
            check_feasible(cfg)
            cells = cells_of(cfg)
            print(json.dumps({"experiment": cfg.kind.value, "config_hash": cfg.content_hash(),
                              "cells": len(cells), "trials_per_cell": cfg.trials}, indent=2))
            return 0
        res = run_experiment(cfg, cfg["output.dir"])
    except ConfigurationError as exc:
        print(f"hboolean: invalid config: {exc}", file=sys.stderr)
        return 2
    for w in res.summary.get("warnings", []):
        print(f"warning: {w}", file=sys.stderr)
    print(f"wrote {len(res.records)} records to {res.out_dir}")
    return 130 if res.interrupted else 0


if __name__ == "__main__":
    sys.exit(main())
