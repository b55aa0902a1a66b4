"""
Accuracy and line-delimited JSON metric records.
"""
import json
from pathlib import Path
from typing import Optional, TextIO, Union

import numpy as np


def top1(logits: np.ndarray, labels: np.ndarray) -> float:
    """Fraction of rows whose arg-max equals the label."""
    if logits.shape[0] == 0:
        return 0.0
    return float(np.mean(np.argmax(logits, axis=-1) == labels))


def metric_record(epoch: int, split: str, loss: float, top1_acc: float) -> dict:
    return {"epoch": epoch, "split": split, "loss": float(loss), "top1": float(top1_acc)}


class MetricsWriter:
    """Appends one JSON object per line, flushing after each record."""

    def __init__(self, path: Union[str, Path], append: bool = False):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._file: Optional[TextIO] = open(self.path, "a" if append else "w", encoding="utf-8")

    def write(self, record: dict) -> None:
        self._file.write(json.dumps(record, sort_keys=True) + "\n")
        self._file.flush()

    def close(self) -> None:
        if self._file is not None:
            self._file.close()
            self._file = None

    def __enter__(self) -> "MetricsWriter":
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.close()


def read_metrics(path: Union[str, Path]) -> list[dict]:
    with open(path, encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]
