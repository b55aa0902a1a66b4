"""
Service for datasets: the position-coupled synthetic task, the VIPDATA1 raw
format and a deterministic batch loader.

VIPDATA1 layout: the 8-byte magic, four little-endian u32 (count, side, channels,
classes), then per sample a u32 label followed by ``side * side * channels``
little-endian f32 pixels in row-major ``[H, W, C]`` order.
"""
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path
from typing import Callable, Iterator, Optional, Union

import numpy as np

from vision_permutator.interfaces.service_interfaces import DatasetServiceInterface
from vision_permutator.models.config import SyntheticSpec, TrainConfig
from vision_permutator.models.errors import DatasetError
from vision_permutator.utils.logger import setup_logger

logger = setup_logger(__name__)

DATA_MAGIC = b"VIPDATA1"
_HEADER = struct.Struct("<4I")

BatchTransform = Callable[[np.ndarray, np.ndarray, np.random.Generator], tuple[np.ndarray, ...]]


@dataclass
class Dataset:
    """Images ``[N, H, W, C]`` (float32) with integer labels ``[N]``."""

    images: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        if self.images.ndim != 4 or self.images.shape[0] != self.labels.shape[0]:
            raise DatasetError(f"images {self.images.shape} and labels {self.labels.shape} do not pair up")

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def side(self) -> int:
        return int(self.images.shape[1])

    @property
    def channels(self) -> int:
        return int(self.images.shape[3])


def motif(size: int, channels: int) -> np.ndarray:
    """The fixed pattern every class shares: a signed checkerboard with a bright rim."""
    r, c = np.indices((size, size))
    pattern = np.where((r + c) % 2 == 0, 1.0, -1.0)
    rim = (r == 0) | (c == 0) | (r == size - 1) | (c == size - 1)
    pattern[rim] = 1.5
    return np.repeat(pattern[:, :, None], channels, axis=2).astype(np.float32)


def _render_split(spec: SyntheticSpec, per_class: int, rng: np.random.Generator) -> Dataset:
    count = per_class * spec.num_classes
    labels = rng.permutation(np.repeat(np.arange(spec.num_classes), per_class))
    images = rng.normal(0.0, spec.noise_std, (count, spec.image_side, spec.image_side, spec.channels))
    images = images.astype(np.float32)
    pattern = motif(spec.motif_size, spec.channels)
    cell_h = spec.image_side // spec.grid_rows
    cell_w = spec.image_side // spec.grid_cols
    offsets = rng.integers(0, spec.jitter + 1, size=(count, 2))
    for i, label in enumerate(labels):
        row, col = divmod(int(label), spec.grid_cols)
        y = row * cell_h + int(offsets[i, 0])
        x = col * cell_w + int(offsets[i, 1])
        images[i, y : y + spec.motif_size, x : x + spec.motif_size, :] += pattern
    if spec.nuisance > 0:
        contrast = 1.0 + rng.uniform(-spec.nuisance, spec.nuisance, (count, 1, 1, 1))
        brightness = rng.uniform(-spec.nuisance, spec.nuisance, (count, 1, 1, 1))
        images = (images * contrast + brightness).astype(np.float32)
    return Dataset(images, labels.astype(np.int64), spec.num_classes)


def synth_dataset(spec: SyntheticSpec, rng: np.random.Generator) -> tuple[Dataset, Dataset]:
    """
    Images whose class is the grid cell holding the motif.

    Class ``k`` places the motif in row band ``k // grid_cols`` and column band
    ``k % grid_cols``. Everything else (motif, noise law, jitter) is shared, so
    pooled statistics alone carry no class information.
    """
    train = _render_split(spec, spec.train_per_class, rng)
    val = _render_split(spec, spec.val_per_class, rng)
    return train, val


def _record_dtype(side: int, channels: int) -> np.dtype:
    return np.dtype([("label", "<u4"), ("pixels", "<f4", (side, side, channels))])


def write_dataset(path: Union[str, Path], dataset: Dataset) -> None:
    """Write ``dataset`` in VIPDATA1 format."""
    if dataset.images.shape[1] != dataset.images.shape[2]:
        raise DatasetError(f"VIPDATA1 stores square images, got {dataset.images.shape[1:3]}")
    records = np.empty(len(dataset), dtype=_record_dtype(dataset.side, dataset.channels))
    records["label"] = dataset.labels
    records["pixels"] = dataset.images
    with open(path, "wb") as f:
        f.write(DATA_MAGIC)
        f.write(_HEADER.pack(len(dataset), dataset.side, dataset.channels, dataset.num_classes))
        f.write(records.tobytes())


def read_dataset(path: Union[str, Path]) -> Dataset:
    """
    Read a VIPDATA1 file.

    Raises:
        DatasetError: On I/O failure, bad magic, truncation or out-of-range labels.
    """
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise DatasetError(f"cannot read dataset {path}: {e.strerror}") from e
    if raw[: len(DATA_MAGIC)] != DATA_MAGIC:
        raise DatasetError(f"{path}: not a VIPDATA1 file")
    body = len(DATA_MAGIC) + _HEADER.size
    if len(raw) < body:
        raise DatasetError(f"{path}: truncated header")
    count, side, channels, classes = _HEADER.unpack_from(raw, len(DATA_MAGIC))
    record = _record_dtype(side, channels)
    expected = body + count * record.itemsize
    if len(raw) != expected:
        raise DatasetError(f"{path}: expected {expected} bytes for {count} samples, found {len(raw)}")
    records = np.frombuffer(raw, dtype=record, count=count, offset=body)
    labels = records["label"].astype(np.int64)
    if count and labels.max() >= classes:
        raise DatasetError(f"{path}: label {labels.max()} outside {classes} classes")
    return Dataset(records["pixels"].astype(np.float32), labels, classes)


class Stream(IntEnum):
    """Independent random streams derived from one run seed."""

    ORDER = 0
    BATCH = 1
    STOCHASTIC_DEPTH = 2


def stream_rng(seed: int, epoch: int, stream: Stream, index: int = 0) -> np.random.Generator:
    return np.random.default_rng([seed, epoch, int(stream), index])


class BatchLoader:
    """
    Fixed-order minibatches for one epoch.

    The sample order comes from ``seed`` and ``epoch`` only, and every batch gets its
    own generator seeded by ``(seed, epoch, batch index)``, so the batches are the
    same for any worker count.
    """

    def __init__(
        self,
        dataset: Dataset,
        batch_size: int,
        seed: int = 0,
        shuffle: bool = True,
        workers: int = 1,
        transform: Optional[BatchTransform] = None,
    ):
        if batch_size < 1:
            raise ValueError(f"batch_size must be at least 1, got {batch_size}")
        self.dataset = dataset
        self.batch_size = batch_size
        self.seed = seed
        self.shuffle = shuffle
        self.workers = workers
        self.transform = transform

    def __len__(self) -> int:
        return -(-len(self.dataset) // self.batch_size)

    def order(self, epoch: int) -> np.ndarray:
        if not self.shuffle:
            return np.arange(len(self.dataset))
        return stream_rng(self.seed, epoch, Stream.ORDER).permutation(len(self.dataset))

    def _make_batch(self, epoch: int, index: int, order: np.ndarray) -> tuple[np.ndarray, ...]:
        picked = order[index * self.batch_size : (index + 1) * self.batch_size]
        images = self.dataset.images[picked]
        labels = self.dataset.labels[picked]
        if self.transform is not None:
            rng = stream_rng(self.seed, epoch, Stream.BATCH, index)
            return self.transform(images, labels, rng)
        return images, labels

    def epoch(self, epoch: int) -> Iterator[tuple[np.ndarray, ...]]:
        order = self.order(epoch)
        indices = range(len(self))
        if self.workers == 1:
            for index in indices:
                yield self._make_batch(epoch, index, order)
            return
        with ThreadPoolExecutor(max_workers=self.workers, thread_name_prefix="vip-loader") as pool:
            yield from pool.map(lambda index: self._make_batch(epoch, index, order), indices)


class DatasetService(DatasetServiceInterface):
    """Loads the train/val splits a TrainConfig points at."""

    def __init__(self, config: Optional[TrainConfig] = None):
        self.config = config or TrainConfig()

    def load(self) -> tuple[Dataset, Dataset]:
        cfg = self.config
        if cfg.dataset_path is not None:
            logger.info("reading %s and %s", cfg.dataset_path, cfg.val_dataset_path)
            train, val = read_dataset(cfg.dataset_path), read_dataset(cfg.val_dataset_path)
            if (train.side, train.channels, train.num_classes) != (val.side, val.channels, val.num_classes):
                raise DatasetError("train and validation files disagree on side, channels or classes")
            return train, val
        logger.info("generating the synthetic position task (K=%d)", cfg.synthetic.num_classes)
        return synth_dataset(cfg.synthetic, np.random.default_rng(cfg.seed))
