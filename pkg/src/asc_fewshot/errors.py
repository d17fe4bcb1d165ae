"""Exception types shared across the library.

The CLI maps these onto stable exit codes, so new failure modes should
reuse one of the existing classes where possible.
"""


class ASCError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(ASCError, ValueError):
    """Operand dimensions disagree with what an operation requires."""


class DomainError(ASCError, ValueError):
    """Input lies outside an operation's numeric domain (e.g. log of a non-positive)."""


class DegenerateInputError(ASCError, ValueError):
    """Input too degenerate to process, such as normalizing a near-zero vector."""


class DegenerateEpisodeError(ASCError, ValueError):
    """Episode cannot support the requested loss (e.g. an anchor with no positives)."""


class ContractError(ASCError, ValueError):
    """An API precondition was violated by the caller."""


class CapacityError(ASCError, ValueError):
    """Dataset is too small for the requested draw."""


class FormatError(ASCError, ValueError):
    """A persisted file violates its declared format."""


class CompatibilityError(ASCError, ValueError):
    """Two artifacts disagree, such as checkpoint dims versus config dims."""


class ConfigError(ASCError, ValueError):
    """Configuration file is malformed or holds an invalid value."""


class NumericError(ASCError, ArithmeticError):
    """A non-finite value appeared where a finite one is required."""
