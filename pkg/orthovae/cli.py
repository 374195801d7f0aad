"""
Command line entry point for orthovae.

Usage:
    orthovae generate --config runs/lin.json [--ratio 1.0 1.2 1.5]
    orthovae train --preset synth_nonlinear --epochs 50 --jobs 4
    orthovae metrics --config runs/lin.json
    orthovae sweep-beta --config runs/lin.json --betas 1e-5 1e-4 1e-3
    orthovae theory-check
    orthovae report runs/synth_lin_beta_vae runs/synth_lin_ae

Exit codes:
    0 success, 1 failed check or seed, 2 invalid configuration
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from orthovae.config import (
    EXIT_BAD_CONFIG,
    EXIT_FAILED_CHECK,
    EXIT_SUCCESS,
    LOG_FORMAT,
    RUNS_DIR,
)
from orthovae.errors import ConfigError
from orthovae.experiment_config import PRESETS, ExperimentConfig
from orthovae import experiments
from orthovae.statistics import print_summary

logger = logging.getLogger(__name__)


def parse_seed_list(text: str) -> List[int]:
    """
    Parse "0,1,2" or "0-4" (inclusive range) into a list of seeds.

    Raises:
        argparse.ArgumentTypeError: On malformed input
    """
    try:
        if "-" in text.strip("-"):
            start, stop = text.split("-", 1)
            seeds = list(range(int(start), int(stop) + 1))
        else:
            seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed list '{text}'")
    if not seeds:
        raise argparse.ArgumentTypeError("seed list is empty")
    return seeds


def _common_options() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="Experiment configuration (JSON)")
    common.add_argument(
        "--preset",
        choices=sorted(PRESETS),
        default="synth_linear",
        help="Built-in configuration used when --config is absent",
    )
    common.add_argument("--model-kind", default=None, help="Override the preset's model kind")
    common.add_argument("--latent-dim", type=int, default=None, help="Override the latent width")
    common.add_argument("--seed-list", type=parse_seed_list, default=None, help='Seeds, e.g. "0,1,2" or "0-9"')
    common.add_argument("--jobs", type=int, default=1, help="Seeds trained in parallel")
    common.add_argument("--out", type=Path, default=RUNS_DIR, help="Output root directory")
    common.add_argument("--overwrite", action="store_true", help="Replace existing files")
    common.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_options()
    parser = argparse.ArgumentParser(
        prog="orthovae",
        description="Train autoencoder variants and measure local decoder orthogonality.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    generate = sub.add_parser("generate", parents=[common], help="Write the synthetic dataset")
    generate.add_argument("--ratio", type=float, nargs="+", default=None, help="Stretch ratio(s) of the linear task")

    train = sub.add_parser("train", parents=[common], help="Train every seed")
    train.add_argument("--epochs", type=int, default=None, help="Override the epoch budget")

    sub.add_parser("metrics", parents=[common], help="Evaluate trained seeds")

    sweep = sub.add_parser("sweep-beta", parents=[common], help="Train and evaluate over several betas")
    sweep.add_argument("--betas", type=float, nargs="+", required=True)
    sweep.add_argument("--epochs", type=int, default=None, help="Override the epoch budget")

    theory = sub.add_parser("theory-check", parents=[common], help="Run the optimality property suite")
    theory.add_argument("--problems", type=int, default=20)
    theory.add_argument("--starts", type=int, default=20)
    theory.add_argument("--seed", type=int, default=0)

    report = sub.add_parser("report", parents=[common], help="Summarize one or more runs")
    report.add_argument("runs", type=Path, nargs="*", help="Run directories (defaults to the configured run)")
    return parser


def load_config(args: argparse.Namespace) -> ExperimentConfig:
    """Configuration from --config, or the chosen preset."""
    if args.config is not None:
        config = ExperimentConfig.load(args.config)
        return config.with_overrides(model_kind=args.model_kind, latent_dim=args.latent_dim)
    factory = PRESETS[args.preset]
    kwargs = {}
    if args.model_kind is not None:
        kwargs["model_kind"] = args.model_kind
    if args.latent_dim is not None:
        kwargs["latent_dim"] = args.latent_dim
    try:
        config = factory(**kwargs)
        if args.latent_dim is not None:
            # Keep runs of different latent widths apart
            config = config.with_overrides(name=f"{config.name}_z{args.latent_dim}")
        return config
    except ValueError as e:
        raise ConfigError(f"Invalid preset override: {e}") from e


# ============================================================================
# Subcommands
# ============================================================================

def cmd_generate(config: ExperimentConfig, args: argparse.Namespace) -> int:
    ratios = args.ratio or [None]
    status = EXIT_SUCCESS
    for ratio in ratios:
        target = config
        if ratio is not None:
            dataset = config.dataset.model_copy(update={"ratio": ratio})
            name = config.name if len(ratios) == 1 else f"{config.name}_ratio{ratio:g}"
            target = config.with_overrides(name=name, dataset=dataset.model_dump())
        result = experiments.generate_dataset_files(target, args.out, overwrite=args.overwrite)
        if result["success"]:
            logger.info(f"{result['message']} to {result['path']}")
        else:
            logger.error(result["message"])
            status = EXIT_FAILED_CHECK
    return status


def cmd_train(config: ExperimentConfig, args: argparse.Namespace) -> int:
    config = config.with_overrides(epochs=args.epochs)
    results = experiments.run_training(config, args.out, args.seed_list, args.jobs)
    failed = [r["seed"] for r in results if not r["success"]]
    if failed:
        logger.warning(f"Seeds {failed} did not finish training")
    return EXIT_FAILED_CHECK if len(failed) == len(results) else EXIT_SUCCESS


def cmd_metrics(config: ExperimentConfig, args: argparse.Namespace) -> int:
    summary = experiments.run_metrics(config, args.out, args.seed_list)
    print_summary(
        {config.name: summary, "Random decoder": {"dto": summary["random_decoder_dto"]}},
        title=f"METRICS: {config.name}",
    )
    return EXIT_FAILED_CHECK if len(summary["failed_seeds"]) == len(summary["seeds"]) else EXIT_SUCCESS


def cmd_sweep_beta(config: ExperimentConfig, args: argparse.Namespace) -> int:
    config = config.with_overrides(epochs=args.epochs)
    rows = experiments.run_beta_sweep(config, args.betas, args.out, jobs=args.jobs, seeds=args.seed_list)
    print("\n" + "=" * 60)
    print(f"BETA SWEEP: {config.name}".center(60))
    print("=" * 60)
    for row in rows:
        flags = " (overpruned)" if row["overpruned"] else ""
        flags += " <- chosen" if row["chosen"] else ""
        print(f"  beta={row['beta']:<10g} DtO {row['dto_mean']:.3f}  Disent {row['disent_mean']:.3f}{flags}")
    print("=" * 60 + "\n")
    return EXIT_SUCCESS


def cmd_theory_check(args: argparse.Namespace) -> int:
    checks = experiments.run_theory_check(problems=args.problems, starts=args.starts, seed=args.seed)
    print("\n" + "=" * 60)
    print("THEORY CHECK".center(60))
    print("=" * 60)
    for check in checks:
        mark = "PASS" if check["passed"] else "FAIL"
        print(f"  [{mark}] {check['name']:<50} residual {check['residual']:.3e}")
    print("=" * 60 + "\n")
    return EXIT_SUCCESS if all(c["passed"] for c in checks) else EXIT_FAILED_CHECK


def cmd_report(config: ExperimentConfig, args: argparse.Namespace) -> int:
    runs = args.runs or [experiments.run_directory(config, args.out)]
    missing = [str(r) for r in runs if not (Path(r) / "summary.json").exists()]
    if missing:
        logger.error(f"No summary.json in {missing}; run 'orthovae metrics' first")
        return EXIT_FAILED_CHECK
    report = experiments.build_report(runs, args.out / "report")
    print_summary(report["summaries"], title="REPORT")
    corr = report["correlation"]
    print(f"Pearson r(DtO, Disent) = {corr['r']:.3f} (p = {corr['p_value']:.3g}, n = {corr['count']})")
    return EXIT_SUCCESS


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Parse arguments, run the subcommand and return the exit code."""
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format=LOG_FORMAT)

    if args.command == "theory-check":
        return cmd_theory_check(args)
    try:
        config = load_config(args)
    except ConfigError as e:
        logger.error(str(e))
        return EXIT_BAD_CONFIG

    handlers = {
        "generate": cmd_generate,
        "train": cmd_train,
        "metrics": cmd_metrics,
        "sweep-beta": cmd_sweep_beta,
        "report": cmd_report,
    }
    try:
        return handlers[args.command](config, args)
    except ConfigError as e:
        logger.error(str(e))
        return EXIT_BAD_CONFIG


if __name__ == "__main__":
    sys.exit(main())
