"""Command line entry point: ``vulnmap ingest|access|nse|fuse|run``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import __version__, pipeline
from .config import load_config
from .errors import InputError


def _u64(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vulnmap", description=__doc__)
    parser.add_argument("--version", action="version", version=f"vulnmap {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [("ingest", "merge and deduplicate facility sources"),
                            ("access", "walking times per radio"),
                            ("nse", "train or load the autoencoder and score households"),
                            ("fuse", "build the vulnerability index"),
                            ("run", "all stages in order")]:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, type=Path)
        p.add_argument("--seed", type=_u64, default=None, help="override [run] seed")
        p.add_argument("--load-model", type=Path, default=None,
                       help="skip training and score with this model file (nse, run)")
        p.add_argument("-v", "--verbose", action="store_true")
    toy = sub.add_parser("toy", help="write the bundled toy dataset to a directory")
    toy.add_argument("directory", type=Path)
    toy.add_argument("--seed", type=_u64, default=7)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if args.command == "toy":
        from .toy import write_toy_dataset
        config = write_toy_dataset(args.directory, seed=args.seed)
        print(config)
        return 0
    try:
        cfg = load_config(args.config, seed=args.seed)
    except InputError as exc:
        logging.getLogger("vulnmap").error("%s", exc)
        return pipeline.EXIT_INPUT
    if args.command == "ingest":
        return pipeline.cmd_ingest(cfg)
    if args.command == "access":
        return pipeline.cmd_access(cfg)
    if args.command == "nse":
        return pipeline.cmd_nse(cfg, load_model_path=args.load_model)
    if args.command == "fuse":
        return pipeline.cmd_fuse(cfg)
    return pipeline.cmd_run(cfg, load_model_path=args.load_model)


if __name__ == "__main__":
    sys.exit(main())
