"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 numerical divergence.
"""

from __future__ import annotations

import argparse
import json
import sys

from .errors import ConfigError, DivergenceError
from .experiment import ExperimentConfig, compare, run_experiment
from .flow import SCENE_KINDS, make_scene

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGENCE = 3


def build_parser():
    parser = argparse.ArgumentParser(prog="rematching", description="Velocity-prior regularized reconstruction experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("run", "train one model and write metrics"),
        ("compare", "paired run against lambda = 0"),
        ("validate", "check a config file without running it"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True)
    p = sub.add_parser("scene", help="generate a scene and write it as JSON")
    p.add_argument("--kind", required=True, choices=SCENE_KINDS)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--dim", type=int, default=3, choices=(2, 3))
    p.add_argument("--out", required=True)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "scene":
            try:
                scene = make_scene(args.kind, args.n, args.seed, args.dim)
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc
            scene.save(args.out)
            print(f"wrote {args.out}")
            return EXIT_OK
        cfg = ExperimentConfig.load(args.config)
        if args.command == "validate":
            print("config ok")
        elif args.command == "run":
            report = run_experiment(cfg)
            print(json.dumps(report.metrics_dict(), indent=2))
        else:
            paired = compare(cfg)
            print(json.dumps(paired.delta, indent=2))
    except (ConfigError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    return EXIT_OK
