"""Shared helpers for the experiment scripts."""

import argparse
import dataclasses
import json
import logging
from pathlib import Path

from gmis.cli import write_artifacts
from gmis.experiments import execute, preset_defaults


def parser(doc: str) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(description=doc)
    p.add_argument("--full", action="store_true", help="published draw counts instead of desk scale")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="runs")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def setup(args):
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    return Path(args.out)


def run_one(preset, scheme, out: Path, args, **overrides) -> dict:
    cfg = dataclasses.replace(preset_defaults(preset, desk=not args.full), scheme=scheme, seed=args.seed,
                              output_dir=str(out), **overrides).validate()
    res = execute(cfg)
    rep = write_artifacts(res, out)
    return {"result": res, "report": rep}


def dump(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    print(json.dumps(obj, indent=2, sort_keys=True))
