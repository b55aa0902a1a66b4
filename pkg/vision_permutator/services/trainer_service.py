"""
Service for desk-scale training runs.

Each epoch trains on the shuffled training split, evaluates on the validation
split, appends ``{epoch, split, loss, top1}`` records to the metrics file and
writes ``last.ckpt`` (parameters plus optimizer and loop state) and, on a new best
validation accuracy, ``best.ckpt``.
"""
import math
from pathlib import Path
from typing import Optional

import numpy as np
from pydantic import BaseModel, Field

from vision_permutator.autograd.tensor import no_grad
from vision_permutator.interfaces.service_interfaces import TrainerServiceInterface
from vision_permutator.model_zoo import VisionPermutator, build, get_config
from vision_permutator.models.config import TrainConfig, ViPConfig
from vision_permutator.models.errors import DatasetError, TrainingDivergedError
from vision_permutator.nn.layers import Mode
from vision_permutator.services.augmentation_service import AugmentationService, one_hot, soft_cross_entropy
from vision_permutator.services.checkpoint_service import load_checkpoint, save_checkpoint
from vision_permutator.services.dataset_service import BatchLoader, Dataset, DatasetService, Stream, stream_rng
from vision_permutator.services.optimizer_service import AdamWService, AdamWState, lr_for, schedule
from vision_permutator.utils.logger import EpochProgressTracker, setup_logger
from vision_permutator.utils.metrics import MetricsWriter, metric_record, top1

logger = setup_logger(__name__)

BEST_CHECKPOINT = "best.ckpt"
LAST_CHECKPOINT = "last.ckpt"
EPOCH_ENTRY = "__train__.epoch"
BEST_ENTRY = "__train__.best_top1"
EVAL_BATCH = 256


class TrainResult(BaseModel):
    """Outcome of a training run."""

    history: list[dict] = Field(default_factory=list, description="Metric records in emission order")
    best_top1: float = Field(default=0.0)
    initial_loss: Optional[float] = Field(default=None, description="Loss of the first step of this run")
    best_checkpoint: Optional[str] = None
    last_checkpoint: Optional[str] = None


def resolve_model_config(config: TrainConfig, num_classes: int) -> ViPConfig:
    """Architecture for ``config`` with the classifier sized to the dataset."""
    if config.architecture_file:
        arch = ViPConfig.from_file(config.architecture_file)
    else:
        arch = get_config(config.architecture, num_classes_tiny=num_classes)
    if config.variant is not None:
        arch = arch.with_variant(config.variant)
    if arch.num_classes != num_classes:
        logger.info("resizing the %s classifier from %d to %d classes", arch.name, arch.num_classes, num_classes)
        arch = arch.model_copy(update={"num_classes": num_classes})
    return arch


def evaluate(model: VisionPermutator, dataset: Dataset, batch_size: int = EVAL_BATCH) -> tuple[float, float]:
    """Mean cross-entropy and top-1 accuracy in evaluation mode."""
    total_loss = 0.0
    correct = 0.0
    with no_grad():
        for start in range(0, len(dataset), batch_size):
            images = dataset.images[start : start + batch_size]
            labels = dataset.labels[start : start + batch_size]
            logits = model.forward(images, Mode.EVAL)
            loss = soft_cross_entropy(logits, one_hot(labels, dataset.num_classes, logits.dtype))
            total_loss += loss.item() * len(labels)
            correct += top1(logits.data, labels) * len(labels)
    count = max(len(dataset), 1)
    return total_loss / count, correct / count


def _check_compatible(model: VisionPermutator, dataset: Dataset) -> None:
    if dataset.images.shape[1:] != model.input_shape:
        raise DatasetError(f"dataset images are {dataset.images.shape[1:]}, {model.name} expects {model.input_shape}")
    if dataset.num_classes != model.config.num_classes:
        raise DatasetError(f"dataset has {dataset.num_classes} classes, model predicts {model.config.num_classes}")


def train_loop(
    model: VisionPermutator,
    config: TrainConfig,
    train: Dataset,
    val: Dataset,
    show_progress: bool = True,
) -> TrainResult:
    """
    Train ``model`` in place and return its metrics history.

    Raises:
        DatasetError: If the splits do not fit the model.
        TrainingDivergedError: If a training loss is not finite.
    """
    _check_compatible(model, train)
    _check_compatible(model, val)
    store = model.store
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    best_path = out_dir / BEST_CHECKPOINT
    last_path = out_dir / LAST_CHECKPOINT
    metrics_path = Path(config.metrics_file)
    if not metrics_path.is_absolute():
        metrics_path = out_dir / metrics_path

    augmentation = AugmentationService(config.augmentation)

    def to_targets(images: np.ndarray, labels: np.ndarray, rng: np.random.Generator):
        targets = one_hot(labels, train.num_classes)
        if augmentation.enabled:
            images, targets = augmentation.apply(images, targets, rng)
        return images, targets, labels

    loader = BatchLoader(train, config.batch_size, config.seed, workers=config.loader_workers, transform=to_targets)
    steps_per_epoch = len(loader)
    total_steps = config.epochs * steps_per_epoch
    warmup_steps = int(round(config.resolved_warmup_epochs * steps_per_epoch))
    peak_lr = lr_for(config.batch_size, config.base_lr, config.lr_denominator)
    optimizer = AdamWService(store, config.weight_decay, config.betas, config.eps)

    result = TrainResult(best_checkpoint=str(best_path), last_checkpoint=str(last_path))
    start_epoch = 0
    if config.resume and last_path.exists():
        extra = load_checkpoint(last_path, store)
        optimizer.state = AdamWState.from_entries(extra, store)
        start_epoch = int(extra[EPOCH_ENTRY].reshape(-1)[0])
        result.best_top1 = float(extra[BEST_ENTRY].reshape(-1)[0])
        logger.info("resuming from %s at epoch %d", last_path, start_epoch)

    logger.info(
        "training %s: %d epochs x %d steps, peak lr %.3e, warmup %d steps",
        model.name,
        config.epochs,
        steps_per_epoch,
        peak_lr,
        warmup_steps,
    )
    with MetricsWriter(metrics_path, append=start_epoch > 0) as writer, EpochProgressTracker(
        config.epochs - start_epoch, f"Training {model.name}", enabled=show_progress
    ) as tracker:
        for epoch in range(start_epoch, config.epochs):
            drop_rng = stream_rng(config.seed, epoch, Stream.STOCHASTIC_DEPTH)
            seen = 0
            loss_sum = 0.0
            correct = 0.0
            for index, (images, targets, labels) in enumerate(loader.epoch(epoch)):
                step = epoch * steps_per_epoch + index
                lr = schedule(step, total_steps, warmup_steps, peak_lr, config.min_lr_ratio, config.schedule)
                store.zero_grad()
                logits = model.forward(images, Mode.TRAIN, drop_rng)
                loss = soft_cross_entropy(logits, targets)
                value = loss.item()
                if not math.isfinite(value):
                    raise TrainingDivergedError(value, epoch, step, lr)
                if result.initial_loss is None:
                    result.initial_loss = value
                loss.backward()
                optimizer.step(store, lr)
                seen += len(labels)
                loss_sum += value * len(labels)
                correct += top1(logits.data, labels) * len(labels)

            train_record = metric_record(epoch, "train", loss_sum / seen, correct / seen)
            val_loss, val_top1 = evaluate(model, val)
            val_record = metric_record(epoch, "val", val_loss, val_top1)
            for record in (train_record, val_record):
                writer.write(record)
                result.history.append(record)

            if val_top1 > result.best_top1 or not best_path.exists():
                result.best_top1 = max(result.best_top1, val_top1)
                save_checkpoint(best_path, store)
            extra = optimizer.state.to_entries()
            extra[EPOCH_ENTRY] = np.array([epoch + 1], dtype=np.float32)
            extra[BEST_ENTRY] = np.array([result.best_top1], dtype=np.float32)
            save_checkpoint(last_path, store, extra)

            tracker.update(status=f"epoch {epoch + 1}/{config.epochs}")
            logger.info(
                "epoch %d: train loss %.4f top1 %.3f | val loss %.4f top1 %.3f",
                epoch,
                train_record["loss"],
                train_record["top1"],
                val_loss,
                val_top1,
            )
    return result


class TrainerService(TrainerServiceInterface):
    """Builds the model and data a TrainConfig describes and runs the loop."""

    def __init__(
        self,
        config: TrainConfig,
        dataset_service: Optional[DatasetService] = None,
        show_progress: bool = True,
    ):
        self.config = config
        self.dataset_service = dataset_service or DatasetService(config)
        self.show_progress = show_progress
        self.model: Optional[VisionPermutator] = None

    def train(self) -> list[dict]:
        return self.run().history

    def run(self) -> TrainResult:
        train, val = self.dataset_service.load()
        arch = resolve_model_config(self.config, train.num_classes)
        self.model = build(arch, np.random.default_rng(self.config.seed))
        return train_loop(self.model, self.config, train, val, self.show_progress)
