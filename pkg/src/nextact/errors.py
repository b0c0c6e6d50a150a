"""Exception taxonomy shared across the package.

The CLI maps these onto stable exit codes: config/parameter problems exit 2,
numeric aborts exit 3, failed self-checks exit 1.
"""


class NextactError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(NextactError, ValueError):
    """Operand shapes or ranks are incompatible with the operation."""


class DomainError(NextactError, ValueError):
    """A value lies outside an operation's domain (e.g. log of a non-positive)."""


class NumericError(NextactError, ArithmeticError):
    """NaN or non-finite value where a finite one is required."""


class GraphError(NextactError, ValueError):
    """Tensors from different graphs were mixed, or a graph was misused."""


class InputError(NextactError, ValueError):
    """An input collection is empty or internally inconsistent."""


class ParameterError(NextactError, ValueError):
    """A hyperparameter or argument value violates its invariant."""


class DataError(NextactError, ValueError):
    """Dataset contents cannot support the requested operation."""


class FormatError(NextactError, ValueError):
    """File bytes do not match the declared binary layout."""


class ParseError(NextactError, ValueError):
    """Malformed metadata or annotation text; message names file and line."""


class VocabularyError(NextactError, ValueError):
    """A label string cannot be resolved against the vocabularies."""


class MetricError(NextactError, ValueError):
    """Metric preconditions violated (empty inputs, bad k, ...)."""


class StateError(NextactError, RuntimeError):
    """Optimizer or training state is missing or inconsistent."""


class CheckpointError(NextactError, ValueError):
    """Checkpoint file is unreadable, corrupt, or incompatible."""


class ConfigError(NextactError, ValueError):
    """A run configuration is invalid (unknown keys, bad values)."""


class TrainingAbort(NextactError, RuntimeError):
    """Training stopped on a numeric failure; carries diagnostics."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
