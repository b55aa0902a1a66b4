"""
Command Line Interface for Vision Permutator.

Machine-readable results are written to standard output as JSON lines; logs,
tables and progress go to standard error.
"""
import json
import logging
import os
from pathlib import Path
from typing import Optional

import click
import numpy as np
from dotenv import load_dotenv
from rich.table import Table

from vision_permutator.autograd.tensor import no_grad, set_num_workers
from vision_permutator.model_zoo import (
    REFERENCE_PARAMS_M,
    build,
    count_params,
    get_config,
    model_gradcheck,
    param_breakdown,
    registry,
)
from vision_permutator.models.config import CLISettings, TrainConfig, ViPConfig, parse_json_model
from vision_permutator.models.errors import ConfigError, VerificationError
from vision_permutator.nn.layers import Mode
from vision_permutator.services.benchmark_service import BenchmarkService
from vision_permutator.services.checkpoint_service import load_checkpoint
from vision_permutator.services.dataset_service import DATA_MAGIC, read_dataset, synth_dataset, write_dataset
from vision_permutator.services.trainer_service import TrainerService
from vision_permutator.utils.error_handler import handle_cli_error
from vision_permutator.utils.logger import console, set_package_level, setup_logger

CONFIG_FILE = os.path.join(os.path.expanduser("~"), ".vision_permutator.config.json")

load_dotenv()


def load_settings(path: str = CONFIG_FILE) -> CLISettings:
    """User defaults, or built-in defaults when the file is absent or invalid."""
    if not os.path.exists(path):
        return CLISettings()
    try:
        with open(path, "r", encoding="utf-8") as config_file:
            return parse_json_model(CLISettings, config_file.read())
    except ConfigError as e:
        setup_logger(__name__).warning(f"Ignoring {path}: {e}")
        return CLISettings()


# Load configuration at import so option defaults can use it
settings = load_settings()


def emit(record: dict) -> None:
    """Write one JSON line to standard output."""
    click.echo(json.dumps(record, sort_keys=True))


class ViPGroup(click.Group):
    """Click group whose usage errors exit with status 1."""

    def make_context(self, info_name, args, parent=None, **extra):
        try:
            return super().make_context(info_name, args, parent=parent, **extra)
        except click.UsageError as e:
            e.exit_code = 1
            raise

    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except click.UsageError as e:
            e.exit_code = 1
            raise


@click.group(cls=ViPGroup)
def cli():
    """Vision Permutator CLI - build, train, verify and benchmark MLP-like vision models."""
    pass


@cli.command()
def configure():
    """Configure default settings."""
    current = settings
    updated = CLISettings(
        default_model=click.prompt("Default model", type=click.Choice(list(registry())), default=current.default_model),
        num_workers=click.prompt("Matmul worker threads", type=click.IntRange(min=1), default=current.num_workers),
        bench_batch=click.prompt("Benchmark batch size", type=click.IntRange(min=1), default=current.bench_batch),
        bench_iters=click.prompt("Benchmark timed iterations", type=click.IntRange(min=10), default=current.bench_iters),
        bench_warmup=click.prompt("Benchmark warmup iterations", type=click.IntRange(min=0), default=current.bench_warmup),
        gradcheck_tol=click.prompt("Gradcheck tolerance", type=float, default=current.gradcheck_tol),
    )
    with open(CONFIG_FILE, "w", encoding="utf-8") as config_file:
        config_file.write(updated.model_dump_json(indent=2))
    click.echo("Configuration saved.", err=True)


@cli.command()
def show_config():
    """Display current default configuration."""
    if os.path.exists(CONFIG_FILE):
        emit(settings.model_dump())
    else:
        click.echo("No configuration found. Using built-in defaults.", err=True)
        emit(CLISettings().model_dump())


def _resolve_architecture(model: str, config_path: Optional[str], num_classes: Optional[int] = None) -> ViPConfig:
    if config_path:
        return ViPConfig.from_file(config_path)
    return get_config(model, num_classes_tiny=num_classes or 8)


@cli.command()
@click.argument("model_name", required=False)
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), help="ViPConfig JSON file")
@click.option("--verbose", "-v", is_flag=True, default=False, help="Enable verbose logging")
def params(model_name: Optional[str], config_path: Optional[str], verbose: bool):
    """Print total and per-stage parameter counts of MODEL_NAME."""
    logger = setup_logger(__name__, verbose=verbose)
    try:
        arch = _resolve_architecture(model_name or settings.default_model, config_path)
        breakdown = param_breakdown(arch)
        total = count_params(arch)
        reference = REFERENCE_PARAMS_M.get(arch.name)
        delta = None if reference is None else 100.0 * (total / 1e6 - reference) / reference

        table = Table(title=f"{arch.name} parameters")
        table.add_column("Part")
        table.add_column("Parameters", justify="right")
        for part, count in breakdown.items():
            table.add_row(part, f"{count:,}")
        table.add_row("total", f"{total:,}")
        if reference is not None:
            table.add_row("reference", f"{reference:.0f}M ({delta:+.1f}%)")
        console.print(table)

        emit({"model": arch.name, "total": total, "parts": breakdown, "reference_m": reference, "delta_pct": delta})
    except Exception as e:
        handle_cli_error(e, logger, verbose)


def _load_inputs(input_path: str) -> np.ndarray:
    with open(input_path, "rb") as f:
        head = f.read(len(DATA_MAGIC))
    if head == DATA_MAGIC:
        return read_dataset(input_path).images
    images = np.load(input_path, allow_pickle=False)
    return images[None] if images.ndim == 3 else images


@cli.command()
@click.option("--model", "-m", "model_name", default=settings.default_model, help="Registry name of the model")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), help="ViPConfig JSON file")
@click.option("--checkpoint", "-c", type=click.Path(exists=True, dir_okay=False), help="VIPCKPT1 weights")
@click.option("--input", "-i", "input_path", type=click.Path(exists=True, dir_okay=False), help=".npy array or VIPDATA1 file")
@click.option("--random", "random_input", is_flag=True, default=False, help="Use random images instead of --input")
@click.option("--batch", type=click.IntRange(min=1), default=1, help="Number of random images")
@click.option("--num-classes", type=click.IntRange(min=1), default=None, help="Classes of ViP-Tiny")
@click.option("--seed", type=int, default=0, help="Seed for random weights and images")
@click.option("--verbose", "-v", is_flag=True, default=False, help="Enable verbose logging")
def forward(
    model_name: str,
    config_path: Optional[str],
    checkpoint: Optional[str],
    input_path: Optional[str],
    random_input: bool,
    batch: int,
    num_classes: Optional[int],
    seed: int,
    verbose: bool,
):
    """
    Print eval-mode logits, one JSON line per image.

    Without --checkpoint the weights are a seeded random initialization.
    """
    logger = setup_logger(__name__, verbose=verbose)
    try:
        if bool(input_path) == random_input:
            raise click.UsageError("give exactly one of --input or --random")
        arch = _resolve_architecture(model_name, config_path, num_classes)
        rng = np.random.default_rng(seed)
        model = build(arch, rng)
        if checkpoint:
            load_checkpoint(checkpoint, model.store)
            logger.debug(f"Loaded weights from {checkpoint}")
        if random_input:
            images = rng.standard_normal((batch,) + model.input_shape).astype(np.float32)
        else:
            images = _load_inputs(input_path)
        with no_grad():
            logits = model.forward(images, Mode.EVAL).numpy()
        for index, row in enumerate(logits):
            emit({"index": index, "logits": [float(v) for v in row]})
    except click.UsageError:
        raise
    except Exception as e:
        handle_cli_error(e, logger, verbose)


@cli.command()
@click.option("--model", "-m", "model_name", default="ViP-Tiny", help="Registry name of the model")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), help="ViPConfig JSON file")
@click.option("--tol", type=click.FloatRange(min=0.0, min_open=True), default=settings.gradcheck_tol, help="Max relative error")
@click.option("--eps", type=click.FloatRange(min=0.0, min_open=True), default=1e-5, help="Finite-difference step")
@click.option("--samples", type=click.IntRange(min=1), default=4, help="Elements checked per parameter tensor")
@click.option("--seed", type=int, default=0)
@click.option("--verbose", "-v", is_flag=True, default=False, help="Enable verbose logging")
def gradcheck(model_name: str, config_path: Optional[str], tol: float, eps: float, samples: int, seed: int, verbose: bool):
    """Check autodiff against finite differences through a whole model (64-bit)."""
    logger = setup_logger(__name__, verbose=verbose)
    try:
        arch = _resolve_architecture(model_name, config_path)
        report = model_gradcheck(arch, tol=tol, eps=eps, max_elements=samples, seed=seed)

        table = Table(title=f"{arch.name} gradcheck (tol {tol:g})")
        table.add_column("Parameter")
        table.add_column("Max rel. error", justify="right")
        table.add_column("Worst index")
        for entry in report.entries:
            style = "red" if entry.max_rel_error > tol else None
            table.add_row(entry.name, f"{entry.max_rel_error:.2e}", str(entry.worst_index), style=style)
        console.print(table)

        emit(report.model_dump())
        if not report.passed:
            raise VerificationError(
                f"max relative error {report.max_rel_error:.3e} in '{report.worst}' exceeds {tol:g}"
            )
    except Exception as e:
        handle_cli_error(e, logger, verbose)


@cli.command()
@click.argument("config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--seed", type=int, default=None, help="Override the config seed")
@click.option("--output-dir", "-o", type=click.Path(file_okay=False), default=None, help="Override the output directory")
@click.option("--epochs", type=click.IntRange(min=1), default=None, help="Override the number of epochs")
@click.option("--resume", is_flag=True, default=False, help="Continue from last.ckpt in the output directory")
@click.option("--quiet", "-q", is_flag=True, default=False, help="Hide the progress bar")
@click.option("--verbose", "-v", is_flag=True, default=False, help="Enable verbose logging")
def train(
    config_path: str,
    seed: Optional[int],
    output_dir: Optional[str],
    epochs: Optional[int],
    resume: bool,
    quiet: bool,
    verbose: bool,
):
    """Train the model a TrainConfig JSON file describes."""
    logger = setup_logger(__name__, verbose=verbose, level=None if verbose else logging.INFO)
    set_package_level(logging.DEBUG if verbose else logging.INFO)
    try:
        config = TrainConfig.from_file(config_path)
        overrides = {"seed": seed, "output_dir": output_dir, "epochs": epochs, "resume": resume or None}
        updates = {k: v for k, v in overrides.items() if v is not None}
        if updates:
            config = TrainConfig.model_validate({**config.model_dump(), **updates})
        result = TrainerService(config, show_progress=not quiet).run()
        console.print(f"Best val top-1 {result.best_top1:.3f}, weights in {result.best_checkpoint}", style="green")
        emit(
            {
                "best_top1": result.best_top1,
                "best_checkpoint": result.best_checkpoint,
                "last_checkpoint": result.last_checkpoint,
                "initial_loss": result.initial_loss,
                "epochs": config.epochs,
            }
        )
    except Exception as e:
        handle_cli_error(e, logger, verbose)


@cli.command()
@click.argument("model_names", nargs=-1)
@click.option("--batch", type=click.IntRange(min=1), default=settings.bench_batch, help="Images per forward")
@click.option("--iters", type=click.IntRange(min=10), default=settings.bench_iters, help="Timed iterations")
@click.option("--warmup", type=click.IntRange(min=0), default=settings.bench_warmup, help="Untimed iterations")
@click.option("--workers", type=click.IntRange(min=1), default=None, help="Matmul worker threads")
@click.option("--seed", type=int, default=0)
@click.option("--verbose", "-v", is_flag=True, default=False, help="Enable verbose logging")
def bench(model_names: tuple[str, ...], batch: int, iters: int, warmup: int, workers: Optional[int], seed: int, verbose: bool):
    """Measure forward throughput (img/s) of one or more models."""
    logger = setup_logger(__name__, verbose=verbose)
    try:
        if workers is None:
            workers = settings.num_workers if "VIP_NUM_WORKERS" not in os.environ else None
        service = BenchmarkService(workers=workers, seed=seed, show_progress=not verbose)
        reports = service.run_many(list(model_names) or [settings.default_model], batch, iters, warmup)
        for report in reports:
            console.print(
                f"{report.model}: {report.mean_img_per_s:.1f} ± {report.std_img_per_s:.1f} img/s "
                f"(batch {report.batch}, {report.workers} worker(s))"
            )
            emit(report.model_dump())
    except Exception as e:
        handle_cli_error(e, logger, verbose)


@cli.command()
@click.argument("train_path", type=click.Path(dir_okay=False))
@click.argument("val_path", type=click.Path(dir_okay=False))
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), help="TrainConfig JSON file")
@click.option("--seed", type=int, default=None, help="Override the config seed")
@click.option("--verbose", "-v", is_flag=True, default=False, help="Enable verbose logging")
def synth(train_path: str, val_path: str, config_path: Optional[str], seed: Optional[int], verbose: bool):
    """Export the synthetic position task as two VIPDATA1 files."""
    logger = setup_logger(__name__, verbose=verbose)
    try:
        config = TrainConfig.from_file(config_path) if config_path else TrainConfig()
        train_set, val_set = synth_dataset(config.synthetic, np.random.default_rng(config.seed if seed is None else seed))
        for path, dataset in ((train_path, train_set), (val_path, val_set)):
            Path(path).parent.mkdir(parents=True, exist_ok=True)
            write_dataset(path, dataset)
            emit({"path": str(path), "samples": len(dataset), "side": dataset.side, "classes": dataset.num_classes})
    except Exception as e:
        handle_cli_error(e, logger, verbose)


if __name__ == "__main__":
    cli()
