"""
Exception hierarchy for the few-shot segmentation toolkit.
"""

from typing import Any, Dict


class TaftSegError(Exception):
    """Base exception; extra keyword context is kept on the instance."""

    def __init__(self, message: str, **context: Any):
        self.message = message
        self.context: Dict[str, Any] = dict(context)
        for key, value in context.items():
            setattr(self, key, value)
        super().__init__(message)

    def with_context(self, **context: Any) -> "TaftSegError":
        """Attach more context (e.g. the episode seed) and return self."""
        self.context.update(context)
        for key, value in context.items():
            setattr(self, key, value)
        return self

    def one_line(self) -> str:
        """Machine-parsable single line used by the CLI."""
        parts = [f"error={type(self).__name__}"]
        for key in sorted(self.context):
            parts.append(f"{key}={self.context[key]}")
        parts.append(f'message="{self.message}"')
        return " ".join(parts)


class DimensionError(TaftSegError, ValueError):
    """Exception for shape mismatches."""

    pass


class ContractError(TaftSegError, ValueError):
    """Exception for violated preconditions."""

    pass


class DegenerateLabelError(TaftSegError):
    """A soft-label plane sums to zero, so its prototype is undefined."""

    pass


class DegenerateInputError(TaftSegError):
    """Zero-norm prototype or reference vector."""

    pass


class SingularSystemError(TaftSegError):
    """The 2x2 normal-equation matrix is singular even after ridge."""

    pass


class GenerationError(TaftSegError):
    """Scene generation or episode sampling gave up after bounded retries."""

    pass


class IngestionError(TaftSegError):
    """Folder dataset could not be read."""

    pass


class ConfigurationError(TaftSegError):
    """Invalid or inconsistent configuration."""

    pass


class CheckpointError(TaftSegError):
    """Checkpoint file is malformed or does not match the model."""

    pass


class TrainingAbortedError(TaftSegError):
    """Training stopped because of a non-finite gradient or loss."""

    pass
