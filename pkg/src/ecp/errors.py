"""Exception types shared across the package.

Everything derives from ValueError or RuntimeError so callers that do not
care about the distinction can catch the built-ins.
"""


class DomainError(ValueError):
    """An argument is outside the mathematical domain of the operation."""


class FormatError(ValueError):
    """A file does not match the expected on-disk format."""


class ParseError(ValueError):
    """A cell or field could not be parsed; message carries the location."""


class LengthError(ValueError):
    """Declared and actual payload lengths disagree."""


class DegenerateInputError(ValueError):
    """Input is a degenerate case the method does not define (e.g. a
    one-hot softmax in entropy-scaled scoring)."""


class TrainingError(RuntimeError):
    """Optimization produced a non-finite loss; message carries the epoch."""
