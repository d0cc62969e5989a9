"""Exception hierarchy shared across the package."""


class ReweightError(Exception):
    """Base class for all package errors."""


class DomainError(ReweightError):
    """Input lies outside the mathematical domain of an operation."""


class SupportError(ReweightError):
    """A parameter or weight value violates its distribution's support."""


class ShapeError(ReweightError):
    """Array shapes do not match the declared schema."""


class NonFiniteValue(ReweightError):
    """A density, gradient, or probe evaluated to NaN or +/-inf."""


class UnsupportedPrior(ReweightError):
    """The requested weight-prior variant does not support this operation."""


class UnsupportedFamily(ReweightError):
    """The likelihood family does not support this operation."""


class NotConverged(ReweightError):
    """Optimization hit the iteration budget; carries the best point found."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class DivergentChain(ReweightError):
    """Too many non-finite proposals after warmup."""


class EmptyChain(ReweightError):
    """A posterior with no draws was passed where draws are required."""


class ParseError(ReweightError):
    """Malformed input file; message names the offending line."""


class SingularDesign(ReweightError):
    """Weighted normal equations are singular."""


class InsufficientItems(ReweightError):
    """A user's row cannot be corrupted without item collisions."""


class MissingRows(ReweightError):
    """A study result lacks rows needed to emit the requested table."""


class ConfigError(ReweightError):
    """Invalid study or inference configuration."""
