"""
Error handling utilities for the EgoLeak toolkit.

This module provides comprehensive error handling including:
- Custom exception classes with stable machine codes
- Single-line machine-parsable error rendering
- Safe execution wrappers for the command-line front end
- Validation helpers for JSON records
- Logging setup and error tracking

Author: EgoLeak Team
Version: 1.0.0
"""

from typing import Optional, Dict, Any, Callable, Iterable
import logging

from config import Config

logger = logging.getLogger(__name__)

# =============================================================================
# Custom Exception Classes
# =============================================================================

class EgoLeakError(Exception):
    """
    Base exception class for all EgoLeak errors.

    Every subclass carries a stable ``code`` used in the command-line
    error line so scripts can branch on it.
    """
    code = "E_EGOLEAK"

class DataFormatError(EgoLeakError):
    """
    Exception raised for malformed input files.

    This includes bad magic bytes, dimension mismatches, truncated blobs
    and labels outside their enumerations.
    """
    code = "E_FORMAT"

class MissingDataError(EgoLeakError):
    """
    Exception raised when referenced data is absent.

    This includes clips without embeddings, embeddings without clips and
    queries lacking the scene, take or label a task needs.
    """
    code = "E_MISSING"

class ValidationError(EgoLeakError):
    """Exception raised when an operation's preconditions or bounds are violated."""
    code = "E_VALIDATION"

class ConfigurationError(EgoLeakError):
    """
    Exception raised for configuration-related errors.

    This includes unknown config keys, invalid values and missing seeds.
    """
    code = "E_CONFIG"

class TrainingError(EgoLeakError):
    """
    Exception raised when a head cannot be trained or used.

    This includes missing positive links, single-class label sets,
    non-finite losses and untrained retrievers.
    """
    code = "E_TRAINING"

class CheckpointError(EgoLeakError):
    """Exception raised for unreadable or inconsistent head checkpoints."""
    code = "E_CHECKPOINT"

class RunLockError(EgoLeakError):
    """Exception raised when a run directory is owned by another process."""
    code = "E_LOCKED"

# =============================================================================
# Logging
# =============================================================================

def configure_logging(level: Optional[str] = None) -> None:
    """Configure root logging once using the configured verbosity."""
    logging.basicConfig(
        level=getattr(logging, (level or Config.LOG_LEVEL), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )

def log_error(error: Exception, context: str = "") -> None:
    """Log an error with context information."""
    logger.error(f"Error in {context}: {str(error)}", exc_info=True)

# =============================================================================
# Error Rendering
# =============================================================================

def format_error_line(error: Exception) -> str:
    """
    Render an error as one machine-parsable line.

    Args:
        error (Exception): The error to render

    Returns:
        str: ``error code=<CODE> message=<text>`` with newlines flattened
    """
    code = getattr(error, "code", "E_INTERNAL")
    message = " ".join(str(error).split())
    return f"error code={code} message={message}"

def safe_execute(func: Callable, *args, **kwargs) -> tuple[Any, Optional[str]]:
    """
    Safely execute a function and return result with error line.

    Returns:
        tuple: (result, error_line); error_line is None on success
    """
    try:
        result = func(*args, **kwargs)
        return result, None
    except EgoLeakError as e:
        logger.debug(f"{func.__name__} failed: {e}")
        return None, format_error_line(e)
    except Exception as e:
        log_error(e, func.__name__)
        return None, format_error_line(e)

# =============================================================================
# Validation Helpers
# =============================================================================

def validate_required_fields(data: Dict[str, Any], required_fields: Iterable[str], context: str = "record") -> None:
    """Validate that required fields are present in data."""
    missing_fields = [field for field in required_fields if field not in data or data[field] is None]
    if missing_fields:
        raise DataFormatError(f"{context} is missing required fields: {', '.join(missing_fields)}")

def parse_enum(enum_cls, value: Any, field: str):
    """Parse an exact enum string, raising DataFormatError when it is outside the enum."""
    try:
        return enum_cls(value)
    except ValueError:
        allowed = ", ".join(member.value for member in enum_cls)
        raise DataFormatError(f"{field} value {value!r} is not one of: {allowed}")
