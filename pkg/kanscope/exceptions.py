"""
Error hierarchy for kanscope.

Every domain error derives from ``KanError`` and from the closest builtin, so
callers may catch either. ``exit_code`` is what the management commands return
when the error escapes: 2 usage, 3 numeric failure, 4 I/O.
"""


class KanError(Exception):
    """Base class of every kanscope error."""

    exit_code = 2


# Usage errors (exit code 2)

class OutOfDomainError(KanError, ValueError):
    """A spline input fell outside the extended knot span."""


class UnderdeterminedFitError(KanError, ValueError):
    """Fewer samples than basis functions."""


class WidthSpecError(KanError, ValueError):
    """Malformed network width or arity specification."""


class DimensionMismatchError(KanError, ValueError):
    """Input columns do not match the model or dataset width."""


class ModuleSpecError(KanError, ValueError):
    """Module constraint string could not be parsed or indexes out of range."""


class MissingCacheError(KanError, LookupError):
    """An operation needs activations from a previous forward pass."""


class PruneError(KanError, ValueError):
    """Pruning would disconnect every path from inputs to outputs."""


class FormulaSyntaxError(KanError, ValueError):
    """Formula text is not well formed."""

    def __init__(self, message, position=None):
        self.position = position
        self.detail = message
        if position is not None:
            message = f"{message} (at position {position})"
        super().__init__(message)


class UnknownIdentifierError(FormulaSyntaxError):
    """Name is neither a declared input nor a library function."""


class UnboundVariableError(KanError, LookupError):
    """Expression evaluated without a value for one of its variables."""


class UnsupportedFeatureError(KanError, ValueError):
    """Construct cannot be expressed as a network."""


class DegenerateInputError(KanError, ValueError):
    """Edge inputs do not span a usable range."""


class UnknownPrimitiveError(KanError, LookupError):
    """Name is not in the primitive library."""


class NotFullySymbolicError(KanError, ValueError):
    """Formula extraction found edges still in spline mode."""

    def __init__(self, offenders):
        self.offenders = list(offenders)
        listed = ', '.join(f'({l},{i},{j})' for l, i, j in self.offenders)
        super().__init__(f"Edges not symbolic: {listed}")


class UnknownVersionError(KanError, LookupError):
    """Requested version is not in the checkpoint index."""


# Numeric failures (exit code 3)

class NumericError(KanError, ArithmeticError):
    exit_code = 3


class NonFiniteActivationError(NumericError):
    """A forward pass produced NaN or infinity."""

    def __init__(self, layer, message=None):
        self.layer = layer
        super().__init__(message or f"Non-finite activation in layer {layer}")


class DivergenceError(NumericError):
    """Training loss exceeded the divergence limit."""


class EvaluationDomainError(NumericError):
    """Expression evaluated outside a primitive's domain."""


class InconclusiveTestError(NumericError):
    """Every probe point of a modularity or conservation test was skipped."""


# I/O failures (exit code 4)

class KanIOError(KanError, OSError):
    exit_code = 4


class CorruptedIndexError(KanIOError):
    """Checkpoint journal cannot be read."""


class CheckpointIOError(KanIOError):
    """Snapshot file could not be written or read."""
