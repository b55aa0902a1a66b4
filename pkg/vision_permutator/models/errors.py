"""
Exception types for the vision_permutator package.
"""
from typing import Optional, Sequence


class ViPError(Exception):
    """Base class for every error raised by vision_permutator."""


class ShapeError(ViPError, ValueError):
    """Raised when tensor extents do not fit an operation."""

    def __init__(self, message: str, *shapes: Sequence[int]):
        """
        Initialize the shape error.

        Args:
            message: Description of the mismatch
            *shapes: The offending shapes, reported verbatim
        """
        super().__init__(message)
        self.message = message
        self.shapes = tuple(tuple(s) for s in shapes)

    def __str__(self):
        if not self.shapes:
            return self.message
        rendered = ", ".join(str(s) for s in self.shapes)
        return f"{self.message}: {rendered}"


class ConfigError(ViPError, ValueError):
    """Represents an invalid configuration document or field."""

    def __init__(
        self,
        message: str,
        field: Optional[str] = None,
        line: Optional[int] = None,
        column: Optional[int] = None,
    ):
        """
        Initialize the configuration error.

        Args:
            message: Error message describing the validation issue
            field: Optional dotted path of the failing field
            line: Optional line number where a parse error occurred
            column: Optional column number where a parse error occurred
        """
        super().__init__(message)
        self.message = message
        self.field = field
        self.line = line
        self.column = column

    def __str__(self):
        base_msg = self.message
        if self.field:
            base_msg = f"{self.field}: {base_msg}"
        if self.line is not None and self.column is not None:
            base_msg += f" (line {self.line}, column {self.column})"
        return base_msg


class CheckpointError(ViPError):
    """Raised for malformed, truncated or mismatched checkpoint files."""

    def __init__(self, message: str, name: Optional[str] = None, offset: Optional[int] = None):
        super().__init__(message)
        self.message = message
        self.name = name
        self.offset = offset

    def __str__(self):
        base_msg = self.message
        if self.name is not None:
            base_msg += f" [tensor '{self.name}']"
        if self.offset is not None:
            base_msg += f" (byte {self.offset})"
        return base_msg


class DatasetError(ViPError):
    """Raised when a dataset file cannot be read or is inconsistent."""


class GradientError(ViPError):
    """Raised for backward passes that cannot run (non-scalar loss, detached graph, missing grad)."""


class TrainingDivergedError(ViPError):
    """Raised when the training loss stops being finite."""

    def __init__(self, loss: float, epoch: int, step: int, lr: float):
        super().__init__(f"non-finite loss {loss} at epoch {epoch}, step {step} (lr={lr:.3e})")
        self.loss = loss
        self.epoch = epoch
        self.step = step
        self.lr = lr


class VerificationError(ViPError):
    """Raised when a numerical verification (gradcheck) fails."""
