"""Exception types raised across the package."""


class StructuralError(ValueError):
    """Array shapes or container sizes do not line up."""


class ConfigurationError(ValueError):
    """A parameter is outside its valid range."""


class UsageError(ValueError):
    """An operation was called with arguments it cannot work with."""


class DomainError(ValueError):
    """Input lies outside a function's mathematical domain."""


class NumericalDivergenceError(ArithmeticError):
    """An update would leave the Dirichlet domain (a non-positive entry).

    ``index`` is the position of the first offending entry and
    ``iteration`` is filled in by the drivers when known.
    """

    def __init__(self, message, index=None, iteration=None):
        super().__init__(message)
        self.index = index
        self.iteration = iteration


class StalenessStarvationError(RuntimeError):
    """The master dropped too many stale gradients in a row to make progress."""


class CorpusParseError(ValueError):
    """Malformed bag-of-words input. ``line`` is 1-based when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class CorpusRangeError(CorpusParseError):
    """A word or document id falls outside the header's declared range."""
