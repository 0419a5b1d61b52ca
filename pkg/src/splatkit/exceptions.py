"""Exception hierarchy shared by all splatkit modules."""


class SplatkitError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(SplatkitError, ValueError):
    """A value violates a type invariant (non-finite, out of range, ...)."""


class FormatError(SplatkitError, ValueError):
    """A file does not follow the expected binary or text layout."""


class LengthError(FormatError):
    """A file payload is shorter or longer than its header announces."""


class DegenerateInputError(SplatkitError, ValueError):
    """Input is well-formed but numerically degenerate (e.g. zero norm)."""


class SizeError(SplatkitError, ValueError):
    """A sequence is too short, or a count exceeds what is available."""


class ConfigurationError(SplatkitError, ValueError):
    """Parameters are inconsistent with each other or with the data."""


class ConsistencyError(SplatkitError, ValueError):
    """Two related objects (state and observations, ...) do not match."""


class ConnectivityError(SplatkitError, ValueError):
    """The pair graph is not connected.

    ``components`` holds the connected components as sorted lists of view
    indices, largest first.
    """

    def __init__(self, components):
        self.components = [sorted(c) for c in components]
        self.components.sort(key=lambda c: (-len(c), c[0]))
        desc = "; ".join(_format_component(c) for c in self.components)
        super().__init__(
            f"pair graph is disconnected into {len(self.components)} components: {desc}"
        )


def _format_component(c):
    if len(c) > 8:
        return "{" + ", ".join(map(str, c[:8])) + f", ... ({len(c)} views)" + "}"
    return "{" + ", ".join(map(str, c)) + "}"


class ExtractionError(SplatkitError, ValueError):
    """A camera pose cannot be read out of an alignment state."""


class DegeneracyError(DegenerateInputError):
    """Point configuration is rank-deficient for a similarity fit."""


class DivergenceError(SplatkitError, ArithmeticError):
    """The optimizer produced non-finite values.

    ``last_state`` is the last state whose energy was finite.
    """

    def __init__(self, message, last_state=None):
        super().__init__(message)
        self.last_state = last_state

