"""Command-line entry point.

Each subcommand drives exactly one stage of an experiment run directory;
`reproduce-desk` chains them all at desk scale. Flags override config-file
values, which override built-in defaults. Relative run directories resolve
against $CAMFORGE_DATA_ROOT when it is set.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

from .experiment import ABLATIONS, ExperimentConfig, ExperimentRun

log = logging.getLogger("camforge")

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2

STAGE_COMMANDS = {
    "synth-data": lambda run, args: run.stage_data(),
    "train-embedder": lambda run, args: run.stage_embedder(),
    "compute-anchor": lambda run, args: run.stage_anchor(),
    "train-spoc": lambda run, args: run.stage_spoc(args.ablation),
    "attack": lambda run, args: run.stage_attack(args.ablation),
    "eval-camera": lambda run, args: run.stage_classifier(),
    "eval-detector": lambda run, args: run.stage_detector(),
    "report": lambda run, args: (run.stage_eval(args.ablation), run.summary()),
}


def _resolve_run_dir(args) -> Path:
    root = Path(os.environ.get("CAMFORGE_DATA_ROOT", "."))
    if args.run_dir is not None:
        p = Path(args.run_dir)
        return p if p.is_absolute() else root / p
    stamp = time.strftime("%Y%m%d-%H%M%S")
    run_id = f"run-{stamp}-seed{args.seed}"
    p = root / run_id
    n = 1
    while p.exists():
        p = root / f"{run_id}.{n}"
        n += 1
    return p


def _build_config(args) -> ExperimentConfig:
    overrides = {}
    if args.config is not None:
        overrides.update(json.loads(Path(args.config).read_text()))
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.target is not None:
        overrides["target_model"] = args.target
    if args.iterations is not None:
        train = overrides.setdefault("train", {})
        train["iterations"] = args.iterations
    if args.patch_size is not None:
        overrides.setdefault("train", {})["patch_size"] = args.patch_size
    run_dir = _resolve_run_dir(args)
    base = ExperimentConfig(run_dir=str(run_dir))
    merged = {**base.resolved(), **overrides}
    if "train" in overrides:
        merged["train"] = {**base.resolved()["train"], **overrides["train"]}
    merged["seed"] = merged.get("seed", 0)
    if "train" in merged:
        merged["train"]["seed"] = merged["seed"]
    return ExperimentConfig.from_dict(merged, run_dir)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="camforge",
        description="camera-trace injection: data synthesis, attack training, "
                    "and the forensic evaluation harness")
    parser.add_argument("--log-level", default="INFO")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in list(STAGE_COMMANDS) + ["reproduce-desk"]:
        p = sub.add_parser(name)
        p.add_argument("--run-dir", default=None,
                       help="run directory (default: fresh run-id directory)")
        p.add_argument("--config", default=None, help="JSON experiment config")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--target", default=None, help="target camera model id")
        p.add_argument("--iterations", type=int, default=None)
        p.add_argument("--patch-size", type=int, default=None)
        p.add_argument("--threads", type=int, default=1)
        if name in ("train-spoc", "attack", "report"):
            p.add_argument("--ablation", default="full", choices=ABLATIONS)
        if name == "reproduce-desk":
            p.add_argument("--ablations", nargs="+", default=list(ABLATIONS),
                           choices=ABLATIONS)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level,
                        format="%(asctime)s %(name)s %(message)s")
    import torch

    torch.set_num_threads(max(1, args.threads))
    if args.seed is None:
        args.seed = 0
    try:
        cfg = _build_config(args)
        if args.command == "reproduce-desk":
            cfg.ablations = tuple(args.ablations)
            cfg.validate()
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"camforge: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        run = ExperimentRun(cfg)
        if args.command == "reproduce-desk":
            summary = run.run_all()
            log.info("summary written to %s", Path(cfg.run_dir) / "summary.json")
        else:
            STAGE_COMMANDS[args.command](run, args)
        print(str(Path(cfg.run_dir)))
        return EXIT_OK
    except FileNotFoundError as exc:
        print(f"camforge: missing prerequisite for {args.command}: {exc}",
              file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # surfaced as a single diagnostic line
        print(f"camforge: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
