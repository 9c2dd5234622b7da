"""
Custom exceptions for the virtual drive test QoE pipeline.

This module defines the exception hierarchy used across ingestion, modelling
and the command-line surface. Every exception carries a machine-readable
error code and maps onto a distinct process exit code.
"""

from typing import Any, Dict, Optional


class QoePipelineError(Exception):
    """
    Base exception for all pipeline errors.

    This class provides a foundation for all custom exceptions in the package,
    ensuring consistent error handling and reporting.
    """

    exit_code: int = 1

    def __init__(
        self,
        message: str,
        details: Optional[Dict[str, Any]] = None,
        error_code: Optional[str] = None
    ) -> None:
        """
        Initialize the base exception.

        Args:
            message: Human-readable error message
            details: Additional error details (optional)
            error_code: Machine-readable error code (optional)
        """
        super().__init__(message)
        self.message = message
        self.details = details or {}
        self.error_code = error_code

    def to_dict(self) -> Dict[str, Any]:
        """
        Convert exception to dictionary format.

        Returns:
            Dictionary representation of the error
        """
        return {
            "error": self.__class__.__name__,
            "message": self.message,
            "details": self.details,
            "error_code": self.error_code,
            "exit_code": self.exit_code,
        }


class DataValidationError(QoePipelineError):
    """
    Exception raised when input data violates a domain invariant.

    Used for out-of-range KPI values, malformed sessions, schema problems,
    degenerate metric inputs and similar contract violations.
    """

    exit_code = 3

    def __init__(
        self,
        message: str,
        field: Optional[str] = None,
        value: Optional[Any] = None,
        validation_rule: Optional[str] = None
    ) -> None:
        """
        Initialize validation error.

        Args:
            message: Validation error message
            field: Name of the field that failed validation (optional)
            value: The invalid value (optional)
            validation_rule: Description of the validation rule that failed (optional)
        """
        details: Dict[str, Any] = {}
        if field:
            details["field"] = field
        if value is not None:
            details["value"] = value
        if validation_rule:
            details["validation_rule"] = validation_rule

        super().__init__(message, details, "VALIDATION_ERROR")
        self.field = field
        self.value = value
        self.validation_rule = validation_rule


class InsufficientDataError(DataValidationError):
    """Raised when an operation needs more sessions, rows or trials than it got."""

    def __init__(self, message: str, required: Optional[int] = None, available: Optional[int] = None) -> None:
        super().__init__(message, validation_rule="minimum size")
        if required is not None:
            self.details["required"] = required
        if available is not None:
            self.details["available"] = available
        self.error_code = "INSUFFICIENT_DATA"
        self.required = required
        self.available = available


class ConfigurationError(DataValidationError):
    """Raised for unreadable or invalid run configuration."""

    def __init__(self, message: str, key: Optional[str] = None, value: Optional[Any] = None) -> None:
        super().__init__(message, field=key, value=value, validation_rule="run configuration")
        self.error_code = "CONFIGURATION_ERROR"


class ArtifactIOError(QoePipelineError):
    """
    Exception raised for file system errors on datasets and artifacts.

    This exception is used when reading, writing or parsing a CSV or JSON
    file fails.
    """

    exit_code = 2

    def __init__(
        self,
        message: str,
        operation: str,
        filename: Optional[str] = None,
        original_error: Optional[Exception] = None
    ) -> None:
        """
        Initialize artifact I/O error.

        Args:
            message: Error message
            operation: Type of operation that failed (read, write, hash)
            filename: Name of the file being operated on (optional)
            original_error: The original exception that caused this error (optional)
        """
        details: Dict[str, Any] = {"operation": operation}
        if filename:
            details["filename"] = filename
        if original_error:
            details["original_error"] = str(original_error)

        super().__init__(message, details, "ARTIFACT_IO_ERROR")
        self.operation = operation
        self.filename = filename
        self.original_error = original_error


class MissingArtifactError(QoePipelineError):
    """
    Exception raised when a stage's upstream artifact is not available.

    Pipeline stages never recompute upstream data; they refuse to run instead.
    """

    exit_code = 5

    def __init__(self, message: str, artifact: str, stage: Optional[str] = None) -> None:
        details: Dict[str, Any] = {"artifact": artifact}
        if stage:
            details["stage"] = stage

        super().__init__(message, details, "MISSING_ARTIFACT")
        self.artifact = artifact
        self.stage = stage


class StaleArtifactError(MissingArtifactError):
    """Raised when an upstream artifact no longer matches its manifest hash."""

    def __init__(self, message: str, artifact: str, expected_hash: str, actual_hash: str) -> None:
        super().__init__(message, artifact)
        self.details.update({"expected_hash": expected_hash, "actual_hash": actual_hash})
        self.error_code = "STALE_ARTIFACT"
        self.expected_hash = expected_hash
        self.actual_hash = actual_hash


class TrainingDivergenceError(QoePipelineError):
    """
    Exception raised when autoencoder training diverges.

    The divergence rule is a validation MSE above a multiple of the initial
    validation MSE for a number of consecutive epochs.
    """

    exit_code = 4

    def __init__(
        self,
        message: str,
        epoch: int,
        val_mse: float,
        initial_val_mse: float
    ) -> None:
        details = {
            "epoch": epoch,
            "val_mse": val_mse,
            "initial_val_mse": initial_val_mse,
        }
        super().__init__(message, details, "TRAINING_DIVERGENCE")
        self.epoch = epoch
        self.val_mse = val_mse
        self.initial_val_mse = initial_val_mse


def handle_exception(exc: Exception) -> Dict[str, Any]:
    """
    Convert any exception to a standardized error payload.

    Args:
        exc: The exception to handle

    Returns:
        Standardized error dictionary, including the process exit code
    """
    if isinstance(exc, QoePipelineError):
        return exc.to_dict()
    return {
        "error": "InternalError",
        "message": "An unexpected error occurred",
        "details": {"original_error": str(exc)},
        "error_code": "INTERNAL_ERROR",
        "exit_code": 1,
    }
