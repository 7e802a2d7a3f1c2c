"""Command line front end.

    rclab gen|sweep|train|encode|eval|run --config run.json [--out DIR] ...

Exit codes: 0 success, 2 configuration error, 3 missing prerequisite
artifact, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace

from . import pipeline
from .labeling import METRICS
from .ratecontrol import EncodeError
from .svr import ModelFormatError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISSING = 3
EXIT_NUMERIC = 4

COMMANDS = ("gen", "sweep", "train", "encode", "eval", "run")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rclab", description="Intra-QP rate-control lab.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="run configuration JSON (defaults apply when omitted)")
    ap.add_argument("--out", help="output directory (overrides the config)")
    ap.add_argument("--method", choices=pipeline.METHODS, help="IQP policy for encode")
    ap.add_argument("--metric", choices=METRICS, help="quality metric the models target")
    ap.add_argument("--threads", type=int, help="worker processes for independent units")
    ap.add_argument("--seed", type=int, help="corpus seed (overrides the config)")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def resolve_config(args) -> pipeline.RunConfig:
    cfg = pipeline.load_config(args.config) if args.config else pipeline.RunConfig()
    overrides = {k: getattr(args, k) for k in ("out", "threads", "seed", "metric")
                 if getattr(args, k) is not None}
    if overrides:
        try:
            cfg = replace(cfg, **overrides)
        except (TypeError, ValueError) as exc:
            raise pipeline.ConfigError(str(exc)) from exc
    return cfg


def dispatch(cfg: pipeline.RunConfig, command: str, method: str | None):
    if command == "gen":
        return {"files": len(pipeline.cmd_gen(cfg))}
    if command == "sweep":
        return pipeline.cmd_sweep(cfg)
    if command == "train":
        return pipeline.cmd_train(cfg)
    if command == "encode":
        if method is None:
            raise pipeline.ConfigError("encode needs --method")
        return {"encoded": pipeline.cmd_encode(cfg, method, cfg.metric)}
    if command == "eval":
        return pipeline.cmd_eval(cfg)
    return pipeline.cmd_run(cfg)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = resolve_config(args)
        result = dispatch(cfg, args.command, args.method)
        pipeline.finish(cfg)
    except pipeline.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (pipeline.MissingArtifact, ModelFormatError) as exc:
        print(f"missing prerequisite: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (pipeline.NumericalFailure, EncodeError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"cannot write output: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(json.dumps(result, indent=1, sort_keys=True, default=str))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
