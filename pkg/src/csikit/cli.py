"""``csikit`` command line.

Every single-operation subcommand runs a one-step pipeline: its ``--config``
JSON holds the step parameters, plus an optional ``"channel"`` object. The
``pipeline`` subcommand takes a full pipeline config instead.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from . import __version__
from .errors import ConfigError, DataError, NumericError
from .pipeline import STEPS, PipelineConfig, Step, load_config, run_pipeline
from .sim import load_json

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

SUBCOMMANDS = ("simulate", "inject", "sanitize", "tof", "aoa", "music", "spectrum", "speed",
               "bvp", "blurmat", "synth-spec", "enhance", "dataset-prep")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _u64(s):
    try:
        v = int(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {s!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def build_parser():
    p = _Parser(prog="csikit", description="CSI simulation, sanitization and feature toolkit")
    p.add_argument("--version", action="version", version=f"csikit {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in SUBCOMMANDS + ("pipeline",):
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--seed", type=_u64, default=None)
        sp.add_argument("--out", default=None, help="output directory")
        sp.add_argument("--format", choices=("csv", "csi1"), default=None,
                        help="format of tensor outputs")
        if name != "pipeline":
            sp.add_argument("--input", default=None, help="CSI1 tensor to operate on")
    return p


def _single_step_config(args) -> PipelineConfig:
    params = load_json(args.config) if args.config else {}
    if not isinstance(params, dict):
        raise ConfigError("config must be a JSON object")
    channel = params.pop("channel", None)
    _, _, _, tensor = STEPS[args.command]
    return PipelineConfig(steps=[Step(args.command, params, True if tensor else None)],
                          out=args.out or "out", seed=args.seed or 0, input=args.input,
                          channel=channel, format=args.format or "csi1")


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        if args.command == "pipeline":
            if not args.config:
                raise ConfigError("pipeline needs --config")
            cfg = load_config(args.config)
            if args.seed is not None:
                cfg.seed = args.seed
            if args.out is not None:
                cfg.out = args.out
            if args.format is not None:
                cfg.format = args.format
        else:
            cfg = _single_step_config(args)
        manifest = run_pipeline(cfg)
        print(json.dumps({"out": cfg.out, "config_hash": manifest.config_hash,
                          "steps": [s["step"] for s in manifest.steps]}))
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, OSError) as exc:
        print(f"data error: {_describe(exc)}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numeric error: {_describe(exc)}", file=sys.stderr)
        return EXIT_NUMERIC


def _describe(exc):
    step = getattr(exc, "step", None)
    msg = str(exc)
    return msg if step is None or step in msg else f"step {step}: {msg}"


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
