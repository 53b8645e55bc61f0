import sys
from dataclasses import replace
from pathlib import Path

import click

from gp_experts.config.run_config import build_run_config
from gp_experts.config.settings import DEMO_THIN
from gp_experts.core.errors import ConfigError, GpExpertsError
from gp_experts.services.bench_service import BenchService
from gp_experts.services.demo_service import run_demo
from gp_experts.services.predict_service import predict_to_csv
from gp_experts.utils.logging_utils import get_logger

logger = get_logger(__name__)

EXIT_OK = 0
EXIT_CONFIG_ERROR = 1
EXIT_PARTIAL_FAILURE = 2


def run_options(command):
    """Flags shared by demo and bench."""
    options = [
        click.option("--model", type=click.Choice(["gpksbp", "rg", "all"]), default=None),
        click.option("--dataset", type=click.Choice(["demo", "1", "2", "3", "4", "5", "all"]), default=None),
        click.option("--seeds", default=None, help="A..B, a comma list or one integer"),
        click.option("--iters", "total_iterations", type=int, default=None),
        click.option("--burnin", "burn_in", type=int, default=None),
        click.option("--thin", type=int, default=None),
        click.option("--out", type=click.Path(file_okay=False), default=None),
        click.option("--config", "config_file", type=click.Path(exists=True, dir_okay=False), default=None),
        click.option("--workers", type=int, default=None),
        click.option("--fast", is_flag=True, help="4000 iterations, 2000 burn-in, thin 20, seeds 0..4"),
    ]
    for option in reversed(options):
        command = option(command)
    return command


def _configure(options: dict, defaults: dict):
    config_file = options.pop("config_file")
    fast = options.pop("fast")
    try:
        config = build_run_config(options, config_file=config_file, fast=fast, defaults=defaults)
    except ConfigError as e:
        logger.error(f"Invalid configuration ({', '.join(e.fields)}): {e}")
        sys.exit(EXIT_CONFIG_ERROR)
    path = config.write_effective()
    logger.info(f"Effective configuration written to {path}")
    return config


@click.group()
def cli():
    """Mixtures of GP experts: demonstration, benchmark and prediction."""


@cli.command()
@run_options
def demo(**options):
    """Fit the kernel stick-breaking mixture to the two-cluster demo surface."""
    config = _configure(options, {"model": "gpksbp", "dataset": "demo", "seeds": "0", "thin": DEMO_THIN})
    if config.dataset != "demo" or config.model != "gpksbp":
        logger.error("demo runs the gpksbp model on the demo dataset only (model, dataset)")
        sys.exit(EXIT_CONFIG_ERROR)
    try:
        for seed in config.seeds:
            seed_config = config if len(config.seeds) == 1 else replace(config, out=Path(config.out) / f"seed_{seed}")
            outputs = run_demo(seed_config, seed)
            logger.info(f"Demo seed {seed}: summary {outputs.summary}")
    except GpExpertsError as e:
        logger.error(f"Demo failed: {e}")
        sys.exit(EXIT_PARTIAL_FAILURE)
    sys.exit(EXIT_OK)


@cli.command()
@run_options
@click.option("--resume", is_flag=True, help="Skip runs already completed in the run store")
@click.option("--per-record-rmse", "per_record_rmse", is_flag=True, default=None,
              help="Average RMSE over per-record mean predictions instead of the grand mean")
def bench(resume, **options):
    """Run both models over the five benchmark problems and score them."""
    config = _configure(options, {})
    if config.dataset == "demo":
        logger.error("bench takes a benchmark dataset id (dataset)")
        sys.exit(EXIT_CONFIG_ERROR)
    config.resume = resume
    service = BenchService(config)
    try:
        summary = service.run()
    finally:
        service.store.close()
    sys.exit(EXIT_PARTIAL_FAILURE if summary.partial_failure else EXIT_OK)


@cli.command()
@click.argument("trace_file", type=click.Path(exists=True, dir_okay=False))
@click.argument("test_csv", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default="predictions.csv")
@click.option("--seed", type=int, default=0, help="Seed for the fresh-prior components")
def predict(trace_file, test_csv, out_path, seed):
    """Posterior predictive mean, variance, density and CRPS from a saved trace."""
    try:
        path = predict_to_csv(trace_file, test_csv, out_path, seed)
    except GpExpertsError as e:
        logger.error(f"Prediction failed: {e}")
        sys.exit(EXIT_CONFIG_ERROR)
    logger.info(f"Predictions written to {path}")
    sys.exit(EXIT_OK)


def main():
    try:
        cli(standalone_mode=False)
    except click.ClickException as e:
        e.show()
        sys.exit(EXIT_CONFIG_ERROR)
    except KeyboardInterrupt:
        logger.info("Interrupted")
        sys.exit(EXIT_PARTIAL_FAILURE)


if __name__ == "__main__":
    main()
