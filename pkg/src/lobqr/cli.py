"""Command-line orchestration: ``lobqr <command> --config <path> [...]``.

Exit codes: 0 ok, 2 config error, 3 missing artifact (or held lock),
4 numeric fault.  Errors print one machine-parseable line to stderr:
``ERROR <CODE>: <message>``.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import pipeline
from .config import RunConfig, default_config, load_config
from .errors import (
    ConfigInvalid,
    DivergedLoss,
    LobqrError,
    LockHeld,
    MissingArtifact,
    StreamTooShort,
)

COMMANDS = ("gen", "label", "train", "predict", "combine", "evaluate", "full-run")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISSING = 3
EXIT_NUMERIC = 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lobqr",
        description="Order-book quantile regression pipeline: generate, label, train, predict, combine, evaluate.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=f"run the {name} stage" if name != "full-run" else "run every stage for every horizon")
        p.add_argument("--config", required=True, help="path to the key=value run config")
        p.add_argument("--seed", type=int, default=None, help="override [run] seed")
        p.add_argument("--out", default=None, help="override [run] out_dir")
        if name not in ("gen", "full-run"):
            p.add_argument(
                "--horizon",
                type=int,
                default=None,
                help="prediction horizon k in event steps (default: first of [run] horizons)",
            )
    return parser


def _configure(args) -> tuple[RunConfig, Path]:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.raw["run"]["seed"] = str(args.seed)
    if args.out is not None:
        cfg.raw["run"]["out_dir"] = str(args.out)
    cfg.validate()
    return cfg, Path(cfg.out_dir)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg, out = _configure(args)
        horizon = getattr(args, "horizon", None)
        k = horizon if horizon is not None else cfg.horizons[0]
        if k < 1:
            raise ConfigInvalid(f"horizon must be positive, got {k}")
        with pipeline.run_lock(out):
            if args.command == "gen":
                pipeline.stage_gen(cfg, out)
            elif args.command == "label":
                pipeline.stage_label(cfg, out, k)
            elif args.command == "train":
                pipeline.stage_train(cfg, out, k)
            elif args.command == "predict":
                pipeline.stage_predict(cfg, out, k)
            elif args.command == "combine":
                pipeline.stage_combine(cfg, out, k)
            elif args.command == "evaluate":
                pipeline.stage_evaluate(cfg, out, k)
            elif args.command == "full-run":
                pipeline.full_run(cfg, out)
        return EXIT_OK
    except FileNotFoundError as exc:
        print(f"ERROR MISSING_ARTIFACT: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (MissingArtifact, LockHeld) as exc:
        print(f"ERROR MISSING_ARTIFACT: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (ConfigInvalid, StreamTooShort) as exc:
        print(f"ERROR CONFIG: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DivergedLoss, FloatingPointError) as exc:
        print(f"ERROR NUMERIC: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except LobqrError as exc:
        print(f"ERROR CONFIG: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def write_default_config(path) -> None:
    """Helper for docs/tests: dump the default config in canonical form."""
    Path(path).write_text(default_config().to_canonical_text(), encoding="utf-8")


if __name__ == "__main__":
    raise SystemExit(main())
