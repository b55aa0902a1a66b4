"""
Error handling utilities.
"""
import logging
import sys
from typing import NoReturn

from vision_permutator.models.errors import VerificationError

EXIT_ERROR = 1
EXIT_VERIFICATION = 2


def exit_code_for(error: BaseException) -> int:
    """Verification failures exit 2; usage, config, data and runtime errors exit 1."""
    if isinstance(error, VerificationError):
        return EXIT_VERIFICATION
    return EXIT_ERROR


def handle_cli_error(error: BaseException, logger: logging.Logger, verbose: bool = False) -> NoReturn:
    """Log ``error`` on standard error and terminate with its exit code."""
    if isinstance(error, VerificationError):
        logger.error(f"Verification failed: {error}")
    elif isinstance(error, FileNotFoundError):
        logger.error(f"File not found: {error}")
    else:
        logger.error(f"{type(error).__name__}: {error}", exc_info=verbose)
    sys.exit(exit_code_for(error))
