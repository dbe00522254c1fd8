"""
Exception hierarchy shared by services and commands.

Every error carries the process exit code the CLI reports for it:
1 for bad input, 2 for runtime failures.
"""

from typing import Any, Dict, Optional


class FlowGraphError(Exception):
    """Base class for all flowgraph errors"""

    exit_code: int = 2

    def __init__(self, message: str, context: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.context = context or {}

    def __str__(self) -> str:
        if not self.context:
            return self.message
        details = ", ".join(f"{key}={value}" for key, value in self.context.items())
        return f"{self.message} ({details})"


class ValidationError(FlowGraphError):
    """Invalid user input or violated invariant"""

    exit_code = 1


class PreconditionError(ValidationError):
    """An operation was called outside its precondition"""


class GraphValidationError(ValidationError):
    """A graph violates symmetry, diagonal or category bounds"""


class PermutationError(ValidationError):
    """A mapping is not a bijection"""


class RecordParseError(ValidationError):
    """A dataset record could not be parsed"""

    def __init__(self, message: str, field: str, line_number: Optional[int] = None):
        context: Dict[str, Any] = {"field": field}
        if line_number is not None:
            context["line"] = line_number
        super().__init__(message, context)
        self.field = field


class CapacityError(FlowGraphError):
    """Input exceeds what an operation is able to handle"""


class DomainError(FlowGraphError):
    """Argument outside the mathematical domain of an operation"""


class TrainingDivergedError(FlowGraphError):
    """Training or fine-tuning produced a non-finite or runaway objective"""


class ArtifactIOError(FlowGraphError):
    """Reading or writing an artifact failed"""
