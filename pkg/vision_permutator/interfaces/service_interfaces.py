"""
Service interfaces for the vision_permutator package.
"""
from abc import ABC, abstractmethod
from pathlib import Path
from typing import TYPE_CHECKING, Optional, Union

import numpy as np

from vision_permutator.models.config import BenchReport
from vision_permutator.nn.layers import ParamStore

if TYPE_CHECKING:
    from vision_permutator.services.dataset_service import Dataset


class OptimizerServiceInterface(ABC):
    """Interface for parameter update rules."""

    @abstractmethod
    def step(self, store: ParamStore, lr: float) -> None:
        """Apply one update to every parameter in ``store`` using its ``grad``."""
        pass


class AugmentationServiceInterface(ABC):
    """Interface for batch augmentation."""

    @abstractmethod
    def apply(
        self, images: np.ndarray, targets: np.ndarray, rng: np.random.Generator
    ) -> tuple[np.ndarray, np.ndarray]:
        """Return augmented images and their soft targets."""
        pass


class DatasetServiceInterface(ABC):
    """Interface for dataset sources."""

    @abstractmethod
    def load(self) -> tuple["Dataset", "Dataset"]:
        """Return the train and validation splits."""
        pass


class CheckpointServiceInterface(ABC):
    """Interface for parameter persistence."""

    @abstractmethod
    def save(self, path: Union[str, Path], store: ParamStore, extra: Optional[dict[str, np.ndarray]] = None) -> None:
        """Write every tensor of ``store`` plus optional extra entries."""
        pass

    @abstractmethod
    def load(self, path: Union[str, Path], store: ParamStore) -> dict[str, np.ndarray]:
        """Fill ``store`` from ``path`` and return the extra entries."""
        pass


class TrainerServiceInterface(ABC):
    """Interface for training runs."""

    @abstractmethod
    def train(self) -> list[dict]:
        """Run to completion and return the metrics history."""
        pass


class BenchmarkServiceInterface(ABC):
    """Interface for throughput measurement."""

    @abstractmethod
    def run(self, model_name: str, batch: int, iters: int, warmup: int) -> BenchReport:
        """Measure forward throughput of one model."""
        pass
