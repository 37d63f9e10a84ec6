"""Command-line entry point: split / train / attack / report, driven by a
JSON manifest. Exit codes: 0 success, 2 validation error, 3 runtime failure.
"""

import argparse
import json
import logging
import sys

from .errors import (
    ConfigError,
    FedkgeError,
    InsufficientKnowledgeError,
    TripleParseError,
    UnknownNameError,
)
from .manifest import RunManifest
from .runner import cmd_attack, cmd_report, cmd_split, cmd_train

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedkge",
        description="Federated knowledge-graph embedding simulator",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("split", "build the federated client split"),
        ("train", "run a training experiment"),
        ("attack", "run the reconstruction attack on a finished run"),
        ("report", "summarize metrics and communication cost across runs"),
    ):
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--manifest", required=True, help="path to the JSON manifest")
        cmd.add_argument("--output", help="override output_dir")
        cmd.add_argument("--seed", type=int, help="override the root seed")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    overrides = {}
    if args.output:
        overrides["output_dir"] = args.output
    if args.seed is not None:
        overrides["seed"] = args.seed

    try:
        manifest = RunManifest.load(args.manifest, overrides=overrides)
    except (ConfigError, TripleParseError, UnknownNameError) as exc:
        print(f"manifest validation failed: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (OSError, json.JSONDecodeError) as exc:
        print(f"cannot read manifest: {exc}", file=sys.stderr)
        return EXIT_VALIDATION

    try:
        if args.command == "split":
            split_dir = cmd_split(manifest)
            print(f"split written to {split_dir}")
        elif args.command == "train":
            result, metrics = cmd_train(manifest)
            print(
                f"{result.mode} finished: {len(result.logs)} round(s), "
                f"test MRR {metrics.mrr:.4f} -> {manifest.output_dir}"
            )
        elif args.command == "attack":
            payload = cmd_attack(manifest)
            print(f"leakage report written for {len(payload['results'])} ratio(s)")
        elif args.command == "report":
            cmd_report(manifest)
            print(f"summary.csv and comm_report.json written to {manifest.output_dir}")
    except (ConfigError, InsufficientKnowledgeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (FedkgeError, OSError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
