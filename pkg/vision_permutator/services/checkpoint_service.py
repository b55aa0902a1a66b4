"""
Service for VIPCKPT1 checkpoints.

Layout: the 8-byte magic, a little-endian u32 entry count, then per entry a u32
name length, the UTF-8 name, a u32 rank, ``rank`` u32 extents and the values as
little-endian f32. Names starting with ``__`` are reserved for training state.
"""
import struct
from pathlib import Path
from typing import Optional, Union

import numpy as np

from vision_permutator.interfaces.service_interfaces import CheckpointServiceInterface
from vision_permutator.models.errors import CheckpointError
from vision_permutator.nn.layers import ParamStore
from vision_permutator.utils.logger import setup_logger

logger = setup_logger(__name__)

CHECKPOINT_MAGIC = b"VIPCKPT1"
RESERVED_PREFIX = "__"
_U32 = struct.Struct("<I")

PathLike = Union[str, Path]


def checkpoint_size(entries: dict[str, np.ndarray]) -> int:
    """Exact file size for ``entries``."""
    total = len(CHECKPOINT_MAGIC) + _U32.size
    for name, array in entries.items():
        total += _U32.size + len(name.encode("utf-8")) + _U32.size + _U32.size * array.ndim + 4 * array.size
    return total


def write_entries(path: PathLike, entries: dict[str, np.ndarray]) -> None:
    """Write named arrays; the file is replaced only once fully written."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(_U32.pack(len(entries)))
        for name, array in entries.items():
            encoded = name.encode("utf-8")
            f.write(_U32.pack(len(encoded)))
            f.write(encoded)
            f.write(_U32.pack(array.ndim))
            f.write(struct.pack(f"<{array.ndim}I", *array.shape))
            f.write(np.ascontiguousarray(array, dtype="<f4").tobytes())
    tmp.replace(path)


class _Reader:
    def __init__(self, raw: bytes, path: PathLike):
        self.raw = raw
        self.path = path
        self.offset = 0

    def take(self, count: int, name: Optional[str], what: str) -> bytes:
        if self.offset + count > len(self.raw):
            raise CheckpointError(f"{self.path}: truncated while reading {what}", name=name, offset=self.offset)
        chunk = self.raw[self.offset : self.offset + count]
        self.offset += count
        return chunk

    def u32(self, name: Optional[str], what: str) -> int:
        return _U32.unpack(self.take(_U32.size, name, what))[0]


def read_entries(path: PathLike) -> dict[str, np.ndarray]:
    """
    Parse a checkpoint into named float32 arrays, in file order.

    Raises:
        CheckpointError: On I/O failure, bad magic, truncation or trailing bytes.
    """
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e.strerror}") from e
    reader = _Reader(raw, path)
    if reader.take(len(CHECKPOINT_MAGIC), None, "magic") != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a VIPCKPT1 checkpoint (bad magic)", offset=0)
    entries: dict[str, np.ndarray] = {}
    for _ in range(reader.u32(None, "entry count")):
        start = reader.offset
        try:
            name = reader.take(reader.u32(None, "name length"), None, "name").decode("utf-8")
        except UnicodeDecodeError as e:
            raise CheckpointError(f"{path}: tensor name is not UTF-8", offset=start) from e
        rank = reader.u32(name, "rank")
        shape = struct.unpack(f"<{rank}I", reader.take(4 * rank, name, "extents"))
        count = int(np.prod(shape, dtype=np.int64))
        data = reader.take(4 * count, name, "values")
        entries[name] = np.frombuffer(data, dtype="<f4").astype(np.float32).reshape(shape)
    if reader.offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - reader.offset} trailing bytes", offset=reader.offset)
    return entries


def save_checkpoint(path: PathLike, store: ParamStore, extra: Optional[dict[str, np.ndarray]] = None) -> None:
    entries = store.state_arrays()
    for name, array in (extra or {}).items():
        if not name.startswith(RESERVED_PREFIX):
            raise CheckpointError("extra entries must use the reserved '__' prefix", name=name)
        entries[name] = array
    write_entries(path, entries)
    logger.debug("wrote %d entries to %s", len(entries), path)


def load_checkpoint(path: PathLike, store: ParamStore) -> dict[str, np.ndarray]:
    """
    Fill ``store`` from ``path`` and return the reserved entries.

    Every model tensor must be present with the registered shape and every
    non-reserved name in the file must be registered; the first offender is named.
    Nothing is assigned unless the whole file matches.
    """
    entries = read_entries(path)
    extra = {name: array for name, array in entries.items() if name.startswith(RESERVED_PREFIX)}
    for name, array in entries.items():
        if name in extra:
            continue
        if name not in store:
            raise CheckpointError("unknown tensor in checkpoint", name=name)
        if array.shape != store[name].shape:
            raise CheckpointError(f"shape {array.shape} does not match the model's {store[name].shape}", name=name)
    for name in store.names():
        if name not in entries:
            raise CheckpointError("tensor missing from checkpoint", name=name)
    for name in store.names():
        store.assign(name, entries[name])
    return extra


class CheckpointService(CheckpointServiceInterface):
    """Saves and restores a ParamStore together with reserved training state."""

    def save(self, path: PathLike, store: ParamStore, extra: Optional[dict[str, np.ndarray]] = None) -> None:
        save_checkpoint(path, store, extra)

    def load(self, path: PathLike, store: ParamStore) -> dict[str, np.ndarray]:
        return load_checkpoint(path, store)
