"""Command-line entry point: ``vol stats|train|predict|calibrate|report``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import experiment
from .errors import ConfigError, VolError


def _config(args) -> experiment.ExperimentConfig:
    raw = {}
    if args.config is not None:
        raw = experiment.ExperimentConfig.load(args.config).to_dict()
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.data is not None:
        raw["data"] = args.data
    return experiment.ExperimentConfig.from_dict(raw)


def _out(args, default: str | None = None) -> Path:
    if args.out is None and default is None:
        raise ConfigError(f"{args.command} needs --out")
    return Path(args.out if args.out is not None else default)


def run(args) -> dict:
    if args.command == "stats":
        return experiment.cmd_stats(_config(args), _out(args))
    if args.command == "train":
        cfg = _config(args)
        cfg.require_seed()
        record = experiment.cmd_train(cfg, _out(args))
        return {"label": record["label"], "out": str(_out(args))}
    if args.command in ("predict", "calibrate"):
        if args.run is None:
            raise ConfigError(f"{args.command} needs --run (a training output directory)")
        if args.command == "predict":
            return {"predictions": str(experiment.cmd_predict(args.run, args.out))}
        doc = experiment.cmd_calibrate(args.run, args.out)
        return {k: doc[k] for k in ("scale_factor", "rmsce_before", "rmsce_after")}
    if args.command == "report":
        root = args.run or args.out
        if root is None:
            raise ConfigError("report needs --out (directory holding the runs)")
        doc = experiment.cmd_report(root)
        print(experiment.render_report(doc), end="")
        return {"runs": len(doc["metrics"])}
    raise ConfigError(f"unknown command {args.command!r}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vol", description=__doc__)
    p.add_argument("command", choices=("stats", "train", "predict", "calibrate", "report"))
    p.add_argument("--config", help="flat JSON experiment config")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int, help="RNG seed (overrides the config)")
    p.add_argument("--data", help=f"Date,Close CSV or '{experiment.SYNTHETIC}' (overrides the config)")
    p.add_argument("--run", help="training run directory (predict, calibrate, report)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse uses 2 for usage errors, which matches the config-error code
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        result = run(args)
    except VolError as exc:
        err = {"error": type(exc).__name__, "message": str(exc), "exit_code": exc.exit_code}
        print(json.dumps(err), file=sys.stderr)
        return exc.exit_code
    print(json.dumps(result, indent=2, sort_keys=True, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
