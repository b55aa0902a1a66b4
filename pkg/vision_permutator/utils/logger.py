"""
Logging utility for vision-permutator.

Human-readable text goes to standard error; standard output is kept for JSON lines.
"""
import logging
from typing import Optional

from rich.console import Console
from rich.logging import RichHandler
from rich.progress import BarColumn, Progress, SpinnerColumn, TaskID, TextColumn

console = Console(stderr=True)
progress = Progress(
    SpinnerColumn(),
    TextColumn("[progress.description]{task.description}"),
    BarColumn(),
    TextColumn("[progress.percentage]{task.percentage:>3.0f}%"),
    console=console,
    transient=True,
)


def setup_logger(name: str, verbose: bool = False, level: Optional[int] = None) -> logging.Logger:
    """Set up a logger with rich formatting on standard error."""
    if level is None:
        level = logging.DEBUG if verbose else logging.WARNING
    logging.basicConfig(
        level=level,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=console, rich_tracebacks=True, show_path=verbose)],
    )
    logger = logging.getLogger(name)
    logger.setLevel(level)
    return logger


def set_package_level(level: int, package: str = "vision_permutator") -> None:
    """Apply ``level`` to every logger already created under ``package``."""
    for name, candidate in logging.root.manager.loggerDict.items():
        if name.split(".")[0] == package and isinstance(candidate, logging.Logger):
            candidate.setLevel(level)


class EpochProgressTracker:
    """Track progress of training epochs or benchmark iterations with rich output."""

    def __init__(self, total: int, description: str = "Processing", enabled: bool = True):
        """Initialize progress tracker."""
        self.total = total
        self.description = description
        self.enabled = enabled
        self.task_id: Optional[TaskID] = None
        self.current = 0

    def __enter__(self) -> "EpochProgressTracker":
        """Start progress tracking."""
        if self.enabled:
            progress.start()
            self.task_id = progress.add_task(self.description, total=self.total)
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        """Stop progress tracking."""
        if self.enabled:
            progress.remove_task(self.task_id)
            progress.stop()

    def update(self, advance: int = 1, status: str = ""):
        """Update progress with optional status message."""
        self.current += advance
        if not self.enabled:
            return
        if status:
            progress.update(self.task_id, description=f"{self.description} - {status}")
        progress.advance(self.task_id, advance)
