#!/usr/bin/env python3
"""
Command-line entry point.

Usage:
    python -m taftseg train --config configs/default.json
    python -m taftseg eval --config configs/default.json --set eval.episodes=200
    python -m taftseg check

Artifacts go to <out-root>/<run-id>/. The output root is ``--out``, else the
TAFTSEG_OUT environment variable, else the config's ``output_dir``, else ./runs.
Exit codes: 0 success, 1 runtime failure, 2 invalid configuration.
"""

import argparse
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Optional, Sequence

from config import RuntimeSettings
from taftseg.data.folder_dataset import export_scenes
from taftseg.data.shape_world import ShapeWorld, build_world
from taftseg.errors import ConfigurationError, TaftSegError
from taftseg.models.checkpoint import load_checkpoint
from taftseg.schemas.config import DatasetSource, RunConfig, load_run_config
from taftseg.schemas.reports import METRICS_CSV_HEADER
from taftseg.services.eval_service import evaluate
from taftseg.services.experiment_service import ablation_run, shot_sweep, stability_run, write_sweep
from taftseg.services.forward_service import TransformSettings
from taftseg.services.manifest_service import run_id, write_manifest
from taftseg.services.selfcheck_service import SUITES, run_checks
from taftseg.services.train_service import CHECKPOINT_NAME, train_run
from taftseg.utils.hashing import config_hash, git_blob_hash
from taftseg.utils.io import write_csv, write_json

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2


def setup_logging(level: str = "INFO"):
    """Setup logging configuration."""
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=[logging.StreamHandler(sys.stdout)],
    )


@dataclass
class CommandContext:
    args: argparse.Namespace
    config: RunConfig
    run_dir: Path
    settings: RuntimeSettings

    @property
    def workers(self) -> int:
        return self.config.eval.workers or self.settings.eval_workers


@dataclass
class CommandOutcome:
    artifacts: Dict[str, str] = field(default_factory=dict)
    summary: Dict[str, object] = field(default_factory=dict)
    exit_code: int = EXIT_OK


def _checkpoint(ctx: CommandContext):
    return load_checkpoint(ctx.run_dir / CHECKPOINT_NAME)


def _settings(config: RunConfig, metadata: Dict[str, object]) -> TransformSettings:
    return TransformSettings(
        ridge=float(metadata.get("ridge", config.train.ridge)),
        identity=bool(metadata.get("identity_transform", config.train.identity_transform)),
    )


def cmd_generate_data(ctx: CommandContext) -> CommandOutcome:
    if ctx.config.world.source != DatasetSource.SYNTHETIC:
        raise ConfigurationError("generate-data exports the synthetic world only", key="world.source")
    world = ShapeWorld(config=ctx.config.world)
    paths = export_scenes(world, ctx.args.count, ctx.args.seed, ctx.run_dir / "data")
    return CommandOutcome(summary={"scenes": len(paths), "directory": str(ctx.run_dir / "data")})


def cmd_train(ctx: CommandContext) -> CommandOutcome:
    result = train_run(ctx.config, out_dir=ctx.run_dir)
    last = result.loss_rows[-1] if result.loss_rows else None
    summary = {"episodes": len(result.history)}
    if last is not None:
        summary.update({"l_r": last.l_r, "l_s": last.l_s, "l_aux": last.l_aux})
    return CommandOutcome(artifacts=result.artifacts, summary=summary)


def cmd_eval(ctx: CommandContext) -> CommandOutcome:
    config = ctx.config
    checkpoint = _checkpoint(ctx)
    world = build_world(config.world)
    report = evaluate(
        checkpoint.model,
        world,
        config.train.split,
        config.eval.shots,
        config.eval.episodes,
        scales=config.eval.scales,
        seed=config.eval.seed,
        queries=config.eval.queries,
        workers=ctx.workers,
        settings=_settings(config, checkpoint.metadata),
        metadata=checkpoint.metadata,
        config_hash=config_hash(config),
    )
    artifacts = {
        "metrics.json": git_blob_hash(write_json(ctx.run_dir / "metrics.json", report)),
        "metrics.csv": git_blob_hash(write_csv(ctx.run_dir / "metrics.csv", METRICS_CSV_HEADER, [report.csv_row()])),
    }
    return CommandOutcome(artifacts=artifacts, summary={"miou": report.miou, "fbiou": report.fbiou})


def cmd_sweep_shots(ctx: CommandContext) -> CommandOutcome:
    config = ctx.config
    checkpoint = _checkpoint(ctx)
    world = build_world(config.world)
    reports = shot_sweep(
        checkpoint.model,
        world,
        config.train.split,
        shots=config.eval.sweep_shots,
        episodes=config.eval.episodes,
        scales=config.eval.scales,
        seed=config.eval.seed,
        workers=ctx.workers,
        settings=_settings(config, checkpoint.metadata),
        metadata=checkpoint.metadata,
        config_hash=config_hash(config),
    )
    artifacts = write_sweep(reports, ctx.run_dir)
    return CommandOutcome(artifacts=artifacts, summary={f"miou_{r.shots}shot": r.miou for r in reports})


def cmd_stability(ctx: CommandContext) -> CommandOutcome:
    trace, result = stability_run(ctx.config, out_dir=ctx.run_dir / "stability")
    artifacts = {f"stability/{name}": digest for name, digest in result.artifacts.items()}
    return CommandOutcome(artifacts=artifacts, summary=trace.summary.model_dump(mode="json"))


def cmd_ablate(ctx: CommandContext) -> CommandOutcome:
    rows = ablation_run(ctx.config, out_dir=ctx.run_dir / "ablation")
    out = ctx.run_dir / "ablation"
    artifacts = {
        f"ablation/{name}": git_blob_hash((out / name).read_bytes()) for name in ("ablation.csv", "ablation.json")
    }
    return CommandOutcome(artifacts=artifacts, summary={"rows": [r.name for r in rows]})


def cmd_check(ctx: CommandContext) -> CommandOutcome:
    results = run_checks(ctx.args.suite or tuple(SUITES))
    for result in results:
        print(f"suite={result.name} passed={result.passed} total={result.total}")
    ok = all(r.ok for r in results)
    artifacts = {"check.json": git_blob_hash(write_json(ctx.run_dir / "check.json", [r.model_dump(mode="json") for r in results]))}
    summary = {r.name: f"{r.passed}/{r.total}" for r in results}
    return CommandOutcome(artifacts=artifacts, summary=summary, exit_code=EXIT_OK if ok else EXIT_RUNTIME)


COMMANDS: Dict[str, Callable[[CommandContext], CommandOutcome]] = {
    "generate-data": cmd_generate_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep-shots": cmd_sweep_shots,
    "stability": cmd_stability,
    "ablate": cmd_ablate,
    "check": cmd_check,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config value")
    common.add_argument("--run-id", help="use this run id instead of the config hash")
    common.add_argument("--out", help="output root directory")

    parser = argparse.ArgumentParser(prog="taftseg", description="Few-shot segmentation experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    gen = sub.add_parser("generate-data", parents=[common], help="export synthetic scenes as PNG pairs")
    gen.add_argument("--count", type=int, default=16)
    gen.add_argument("--seed", type=int, default=0)
    sub.add_parser("train", parents=[common], help="meta-train a model")
    sub.add_parser("eval", parents=[common], help="evaluate the run's checkpoint")
    sub.add_parser("sweep-shots", parents=[common], help="evaluate over several shot counts")
    sub.add_parser("stability", parents=[common], help="trace prototype/reference movement during training")
    sub.add_parser("ablate", parents=[common], help="train and evaluate the ablation rows")
    check = sub.add_parser("check", parents=[common], help="run the numerical self-tests")
    check.add_argument("--suite", action="append", choices=sorted(SUITES))
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main entry point; returns the process exit code."""
    settings = RuntimeSettings.from_env()
    args = build_parser().parse_args(argv)
    setup_logging(settings.log_level)

    try:
        config = load_run_config(args.config, args.set)
        identifier = args.run_id or run_id(config)
        run_dir = Path(settings.resolve_out_root(args.out, config.output_dir)) / identifier
        run_dir.mkdir(parents=True, exist_ok=True)
        logger.info(f"Running {args.command} as run {identifier} in {run_dir}")

        outcome = COMMANDS[args.command](CommandContext(args, config, run_dir, settings))
        write_manifest(run_dir, args.command, config, identifier, outcome.artifacts, outcome.summary)
        return outcome.exit_code

    except ConfigurationError as e:
        print(e.one_line(), file=sys.stderr)
        return EXIT_CONFIG
    except TaftSegError as e:
        print(e.one_line(), file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as e:
        logger.exception(f"Unexpected failure in {args.command}")
        print(f'error={type(e).__name__} message="{e}"', file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == '__main__':
    sys.exit(main())
